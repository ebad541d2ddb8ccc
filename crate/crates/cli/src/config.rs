//! Experiment configuration: TOML or JSON files, flag overrides, default
//! injection and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shearstab::grid::build_grid;
use shearstab::linear::ForcingSchedule;
use shearstab::nonlinear::{
    InitSpec, ThresholdConfig, DEFAULT_EPS0, DEFAULT_K_MAX, DEFAULT_NODES,
};
use shearstab::profile::{Preset, ShearProfile};
use shearstab::scan::{BoundId, Forcing};

use crate::error::CliError;

/// Which experiment a configuration describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    ProfileCheck,
    Scan,
    LinEvolve,
    Nonlinear,
    Threshold,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::ProfileCheck => "profile-check",
            Kind::Scan => "scan",
            Kind::LinEvolve => "lin-evolve",
            Kind::Nonlinear => "nonlinear",
            Kind::Threshold => "threshold",
        }
    }
}

/// Every key a configuration file may carry; absent keys take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub profile: Option<String>,
    pub profile_param: Option<f64>,
    pub nu: Option<f64>,
    pub nu_list: Option<Vec<f64>>,
    pub k: Option<i64>,
    pub k_list: Option<Vec<i64>>,
    pub bounds: Option<Vec<String>>,
    pub forcing: Option<String>,
    pub forcing_family: Option<Vec<String>>,
    pub horizon: Option<f64>,
    pub horizon_factor: Option<f64>,
    pub amplitude: Option<f64>,
    pub eps_rate: Option<f64>,
    pub nodes: Option<usize>,
    pub k_max: Option<usize>,
    pub modes: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub records: Option<usize>,
    pub samples: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub c_lo: Option<f64>,
    pub c_hi: Option<f64>,
    pub bisections: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl RawConfig {
    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RawConfig) -> RawConfig {
        overlay!(self, top; profile, profile_param, nu, nu_list, k, k_list, bounds, forcing, forcing_family,
            horizon, horizon_factor, amplitude, eps_rate, nodes, k_max, modes, seed, records, samples,
            checkpoint_every, c_lo, c_hi, bisections);
        self
    }
}

/// Reads a TOML (`.toml`) or JSON (anything else) configuration file.
pub fn read_raw(path: &Path) -> Result<RawConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| 1 + text[..s.start.min(text.len())].matches('\n').count());
            CliError::Parse {
                path: path.display().to_string(),
                line,
                message: e.message().to_string(),
            }
        })
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            line: Some(e.line()),
            message: e.to_string(),
        })
    }
}

/// Named background profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileSpec {
    pub preset: Preset,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileCheckConfig {
    pub profile: ProfileSpec,
    pub nu: f64,
    /// Heat flow is followed over `[0, horizon_factor ν^{-1/3}]`.
    pub horizon_factor: f64,
    pub samples: usize,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanSettings {
    pub profile: ProfileSpec,
    pub nu_list: Vec<f64>,
    pub k_list: Vec<i64>,
    pub bounds: Vec<BoundId>,
    pub forcing_family: Vec<Forcing>,
    /// Fixed node count; the resolution policy applies when absent.
    pub nodes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinEvolveConfig {
    pub profile: ProfileSpec,
    pub nu: f64,
    pub k: i64,
    pub horizon: f64,
    pub forcing: ForcingSchedule,
    pub amplitude: f64,
    pub eps_rate: f64,
    pub nodes: usize,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonlinearConfig {
    pub profile: ProfileSpec,
    pub nu: f64,
    pub amplitude: f64,
    pub horizon: f64,
    pub k_max: usize,
    pub nodes: usize,
    pub modes: Vec<usize>,
    pub seed: u64,
    pub eps_rate: f64,
    pub records: usize,
    /// Steps between checkpoints; 0 writes only the final state.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdSettings {
    pub profile: ProfileSpec,
    pub probe: ThresholdConfig,
}

/// A validated experiment with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Experiment {
    ProfileCheck(ProfileCheckConfig),
    Scan(ScanSettings),
    LinEvolve(LinEvolveConfig),
    Nonlinear(NonlinearConfig),
    Threshold(ThresholdSettings),
}

impl Experiment {
    pub fn kind(&self) -> Kind {
        match self {
            Experiment::ProfileCheck(_) => Kind::ProfileCheck,
            Experiment::Scan(_) => Kind::Scan,
            Experiment::LinEvolve(_) => Kind::LinEvolve,
            Experiment::Nonlinear(_) => Kind::Nonlinear,
            Experiment::Threshold(_) => Kind::Threshold,
        }
    }

    pub fn profile(&self) -> &ProfileSpec {
        match self {
            Experiment::ProfileCheck(c) => &c.profile,
            Experiment::Scan(c) => &c.profile,
            Experiment::LinEvolve(c) => &c.profile,
            Experiment::Nonlinear(c) => &c.profile,
            Experiment::Threshold(c) => &c.profile,
        }
    }

    /// Canonical JSON of the full description.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("experiment descriptions serialize")
    }

    /// SHA-256 of [`Experiment::canonical`], lowercase hex.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Experiment::Nonlinear(c) => Some(c.seed),
            Experiment::Threshold(c) => Some(c.probe.init.seed),
            _ => None,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn tau(nu: f64) -> f64 {
    nu.powf(-1.0 / 3.0)
}

/// Collects violated clauses instead of stopping at the first.
#[derive(Default)]
struct Clauses(Vec<String>);

impl Clauses {
    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.0.push(msg.into());
        }
    }

    fn positive(&mut self, name: &str, v: f64) {
        self.check(v > 0.0 && v.is_finite(), format!("{name} must be positive"));
    }
}

/// Fills defaults for `kind` and validates every physical parameter.
pub fn resolve(kind: Kind, raw: RawConfig) -> Result<Experiment, CliError> {
    let mut c = Clauses::default();
    let profile = resolve_profile(&raw, kind, &mut c);
    let nodes = raw.nodes.unwrap_or(DEFAULT_NODES);
    c.check(nodes >= 8, "nodes must be at least 8");
    let eps_rate = raw.eps_rate.unwrap_or(DEFAULT_EPS0);
    c.check(eps_rate >= 0.0 && eps_rate.is_finite(), "eps_rate must be nonnegative");
    let single_nu = |c: &mut Clauses| match raw.nu {
        Some(nu) => {
            c.positive("nu", nu);
            nu
        }
        None => {
            c.0.push("nu is required".into());
            f64::NAN
        }
    };
    let experiment = match kind {
        Kind::ProfileCheck => {
            let nu = raw.nu.unwrap_or(1e-4);
            c.positive("nu", nu);
            let horizon_factor = raw.horizon_factor.unwrap_or(10.0);
            c.positive("horizon_factor", horizon_factor);
            let samples = raw.samples.unwrap_or(40);
            c.check(samples >= 1, "samples must be at least 1");
            profile.map(|profile| {
                Experiment::ProfileCheck(ProfileCheckConfig {
                    profile,
                    nu,
                    horizon_factor,
                    samples,
                    nodes,
                })
            })
        }
        Kind::Scan => {
            let nu_list = raw.nu_list.clone().or(raw.nu.map(|v| vec![v])).unwrap_or(vec![1e-4, 1e-5, 1e-6]);
            c.check(!nu_list.is_empty(), "nu_list must not be empty");
            if nu_list.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                c.0.push("nu must be positive".into());
            }
            let k_list = raw.k_list.clone().or(raw.k.map(|v| vec![v])).unwrap_or(vec![1, 2, 4]);
            c.check(!k_list.is_empty() && !k_list.contains(&0), "k must be nonzero");
            let bounds = match &raw.bounds {
                None => BoundId::all().to_vec(),
                Some(list) => list
                    .iter()
                    .filter_map(|b| match b.parse::<BoundId>() {
                        Ok(id) => Some(id),
                        Err(_) => {
                            c.0.push(format!("unknown bound '{b}'"));
                            None
                        }
                    })
                    .collect(),
            };
            c.check(!bounds.is_empty(), "bounds must not be empty");
            let forcing_family = match &raw.forcing_family {
                None => Forcing::standard_family(),
                Some(list) => list
                    .iter()
                    .filter_map(|f| match f.parse::<Forcing>() {
                        Ok(f) => Some(f),
                        Err(_) => {
                            c.0.push(format!("unknown forcing '{f}'"));
                            None
                        }
                    })
                    .collect(),
            };
            c.check(!forcing_family.is_empty(), "forcing_family must not be empty");
            profile.map(|profile| {
                Experiment::Scan(ScanSettings {
                    profile,
                    nu_list,
                    k_list,
                    bounds,
                    forcing_family,
                    nodes: raw.nodes,
                })
            })
        }
        Kind::LinEvolve => {
            let nu = single_nu(&mut c);
            let k = raw.k.unwrap_or(1);
            c.check(k != 0, "k must be nonzero");
            let horizon = raw.horizon.unwrap_or(20.0 * tau(nu));
            if nu > 0.0 {
                c.positive("horizon", horizon);
            }
            let forcing = match ForcingSchedule::from_name(raw.forcing.as_deref().unwrap_or("none")) {
                Ok(f) => f,
                Err(e) => {
                    c.0.push(strip_prefix(e.to_string()));
                    ForcingSchedule::None
                }
            };
            let amplitude = raw.amplitude.unwrap_or(1.0);
            c.check(amplitude >= 0.0 && amplitude.is_finite(), "amplitude must be nonnegative");
            let records = raw.records.unwrap_or(100);
            profile.map(|profile| {
                Experiment::LinEvolve(LinEvolveConfig {
                    profile,
                    nu,
                    k,
                    horizon,
                    forcing,
                    amplitude,
                    eps_rate,
                    nodes,
                    records,
                })
            })
        }
        Kind::Nonlinear => {
            let nu = single_nu(&mut c);
            let amplitude = raw.amplitude.unwrap_or(0.01 * nu.sqrt());
            if nu > 0.0 {
                c.positive("amplitude", amplitude);
            }
            let horizon = raw.horizon.unwrap_or(5.0 * tau(nu));
            if nu > 0.0 {
                c.positive("horizon", horizon);
            }
            let k_max = raw.k_max.unwrap_or(DEFAULT_K_MAX);
            c.check(k_max >= 3, "k_max must be at least 3");
            let modes = raw.modes.clone().unwrap_or(vec![1, 2, 3]);
            c.check(!modes.is_empty(), "modes must not be empty");
            c.check(
                modes.iter().all(|&m| m >= 1 && 3 * m <= k_max),
                "modes must lie in 1..=k_max/3",
            );
            profile.map(|profile| {
                Experiment::Nonlinear(NonlinearConfig {
                    profile,
                    nu,
                    amplitude,
                    horizon,
                    k_max,
                    nodes,
                    modes,
                    seed: raw.seed.unwrap_or(7),
                    eps_rate,
                    records: raw.records.unwrap_or(200),
                    checkpoint_every: raw.checkpoint_every.unwrap_or(0),
                })
            })
        }
        Kind::Threshold => {
            let nu_list = raw.nu_list.clone().unwrap_or(vec![1e-3, 3e-3, 1e-2]);
            if nu_list.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                c.0.push("nu must be positive".into());
            }
            profile.map(|profile| {
                let mut probe = ThresholdConfig::new(profile.preset.clone(), nu_list);
                probe.c_lo = raw.c_lo.unwrap_or(probe.c_lo);
                probe.c_hi = raw.c_hi.unwrap_or(probe.c_hi);
                probe.horizon_factor = raw.horizon_factor.unwrap_or(probe.horizon_factor);
                probe.bisections = raw.bisections.unwrap_or(probe.bisections);
                probe.k_max = raw.k_max.unwrap_or(probe.k_max);
                probe.nodes = nodes;
                probe.eps_rate = eps_rate;
                if let Some(modes) = &raw.modes {
                    probe.init = InitSpec::random(modes.clone(), raw.seed.unwrap_or(probe.init.seed));
                } else if let Some(seed) = raw.seed {
                    probe.init.seed = seed;
                }
                if let Err(e) = probe.validate() {
                    let msg = strip_prefix(e.to_string());
                    if !c.0.contains(&msg) {
                        c.0.push(msg);
                    }
                }
                Experiment::Threshold(ThresholdSettings { profile, probe })
            })
        }
    };
    if !c.0.is_empty() {
        return Err(CliError::Validation(c.0));
    }
    Ok(experiment.expect("a profile is present when no clause failed"))
}

fn strip_prefix(msg: String) -> String {
    msg.strip_prefix("invalid argument: ").map(str::to_string).unwrap_or(msg)
}

fn resolve_profile(raw: &RawConfig, kind: Kind, c: &mut Clauses) -> Option<ProfileSpec> {
    let Some(name) = raw.profile.as_deref() else {
        c.0.push("profile is required".into());
        return None;
    };
    let preset = match Preset::from_name(name, raw.profile_param) {
        Ok(p) => p,
        Err(e) => {
            c.0.push(strip_prefix(e.to_string()));
            return None;
        }
    };
    // The profile check reports a failing profile instead of rejecting it.
    if kind != Kind::ProfileCheck {
        let report = build_grid(DEFAULT_NODES)
            .and_then(|g| ShearProfile::from_preset(preset.clone(), g))
            .map(|p| p.validate_condition_m());
        match report {
            Ok(r) if !r.pass => {
                for v in r.violations {
                    c.0.push(format!("profile {}: {v}", preset.id()));
                }
            }
            Ok(_) => {}
            Err(e) => c.0.push(strip_prefix(e.to_string())),
        }
    }
    Some(ProfileSpec {
        id: preset.id(),
        preset,
    })
}

/// Reads `path` (when given), applies `flags` on top and resolves.
pub fn parse_config(kind: Kind, path: Option<&Path>, flags: RawConfig) -> Result<Experiment, CliError> {
    let base = match path {
        Some(p) => read_raw(p)?,
        None => RawConfig::default(),
    };
    resolve(kind, base.overlay(flags))
}
