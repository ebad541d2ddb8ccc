//! Output directory layout: data files, `summary.json` and `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::Experiment;
use crate::error::CliError;

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A named pass/fail verdict of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            pass,
        }
    }
}

/// Everything a command produced, before it is written out.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    /// `(file name, contents)` written into the output directory.
    pub files: Vec<(String, Vec<u8>)>,
    pub checks: Vec<Check>,
    pub results: Value,
    /// A nonlinear run ended in a blow-up.
    pub blow_up: bool,
    /// `hit`, `miss` or `disabled` for cached commands.
    pub cache: Option<String>,
    pub tolerances: BTreeMap<String, f64>,
    pub grid_nodes: Option<usize>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        !self.blow_up && self.checks.iter().all(|c| c.pass)
    }

    pub fn file(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    /// 0 pass, 1 a failed check, 3 a blow-up.
    pub fn exit_code(&self) -> i32 {
        if self.blow_up {
            3
        } else if self.pass() {
            0
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary<'a> {
    pub command: &'a str,
    pub pass: bool,
    pub checks: &'a [Check],
    pub results: &'a Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileInfo {
    pub id: String,
    pub wall_values: Option<(f64, f64)>,
    pub c0: Option<f64>,
    pub c_max: Option<f64>,
    pub condition_m: Option<bool>,
}

/// Provenance of one invocation.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: Vec<String>,
    pub config_hash: String,
    pub config: Value,
    pub profile: ProfileInfo,
    pub grid_nodes: Option<usize>,
    pub tolerances: BTreeMap<String, f64>,
    pub seed: Option<u64>,
    pub artifact_version: String,
    /// Not deterministic; excluded from reproducibility comparisons.
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
    pub cache: Option<String>,
    pub pass: bool,
    pub exit_code: i32,
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
}

fn json(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("reports serialize");
    s.push(b'\n');
    s
}

/// Writes data files, then `summary.json`, then `manifest.json` into `out`.
pub fn emit(
    out: &Path,
    experiment: &Experiment,
    profile: ProfileInfo,
    outcome: &Outcome,
    command_line: Vec<String>,
    wall_clock_seconds: f64,
) -> Result<RunManifest, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut outputs = Vec::new();
    for (name, bytes) in &outcome.files {
        write(out.join(name), bytes)?;
        outputs.push(name.clone());
    }
    let command = experiment.kind().as_str();
    let summary = Summary {
        command,
        pass: outcome.pass(),
        checks: &outcome.checks,
        results: &outcome.results,
    };
    write(out.join(SUMMARY_FILE), &json(&summary))?;
    outputs.push(SUMMARY_FILE.to_string());
    let manifest = RunManifest {
        command: command.to_string(),
        command_line,
        config_hash: experiment.hash(),
        config: serde_json::to_value(experiment).expect("experiment descriptions serialize"),
        profile,
        grid_nodes: outcome.grid_nodes,
        tolerances: outcome.tolerances.clone(),
        seed: experiment.seed(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        wall_clock_seconds,
        outputs,
        cache: outcome.cache.clone(),
        pass: outcome.pass(),
        exit_code: outcome.exit_code(),
    };
    write(out.join(MANIFEST_FILE), &json(&manifest))?;
    Ok(manifest)
}

/// Formats a float for CSV so that it parses back to the same value.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        "nan".to_string()
    }
}
