//! Command-line surface.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::cache::ScanCache;
use crate::commands::{execute, profile_info};
use crate::config::{parse_config, Kind, RawConfig};
use crate::error::CliError;
use crate::report::emit;
use crate::selftest;

const CONFIG_HELP: &str = "\
Configuration files are TOML (.toml) or JSON (any other extension). Keys:
  profile          couette | sinus-concave | sinus-convex | poly-concave |
                   poly-convex | two-mode-concave | tanh-monotone
  profile_param    preset parameter (epsilon or a)
  nu, nu_list      viscosity, or list of viscosities (scan, threshold)
  k, k_list        streamwise wavenumber(s), nonzero
  bounds           scan bound ids (default: all)
  forcing          lin-evolve forcing: none | decaying-sine
  forcing_family   scan forcing ids (default: the standard family)
  horizon          final time (lin-evolve, nonlinear)
  horizon_factor   horizon in units of nu^(-1/3) (profile-check, threshold)
  amplitude        initial amplitude
  eps_rate         rate constant of the exponential weight
  nodes            Chebyshev nodes
  k_max, modes, seed, records, checkpoint_every    nonlinear settings
  c_lo, c_hi, bisections                           threshold bracket
  samples          heat-flow samples (profile-check)
Flags override file values. Unknown keys are rejected.

Exit codes: 0 pass, 1 failed check or I/O error, 2 invalid input,
3 numerical blow-up. Setting SHEARSTAB_CACHE_DIR caches scan results.";

#[derive(Debug, Parser)]
#[command(name = "shearstab", version, about = "Stability experiments for monotone shear flows in a channel", after_help = CONFIG_HELP)]
pub struct Cli {
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check condition (M) along the heat flow of a profile.
    ProfileCheck(RunArgs),
    /// Sweep resolvent bound ratios over viscosities and wavenumbers.
    Scan(RunArgs),
    /// Evolve one Fourier mode of the linearized system.
    LinEvolve(RunArgs),
    /// Run the full perturbation system.
    Nonlinear(RunArgs),
    /// Bisect the stability threshold amplitude over viscosities.
    Threshold(RunArgs),
    /// Run fast built-in consistency checks.
    Selftest,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: shearstab-out/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub profile_param: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub nu: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub nu_list: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub k: Option<i64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub k_list: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',')]
    pub bounds: Option<Vec<String>>,
    #[arg(long)]
    pub forcing: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub forcing_family: Option<Vec<String>>,
    #[arg(long, allow_negative_numbers = true)]
    pub horizon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub horizon_factor: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub amplitude: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps_rate: Option<f64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub records: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub c_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub c_hi: Option<f64>,
    #[arg(long)]
    pub bisections: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> RawConfig {
        RawConfig {
            profile: self.profile.clone(),
            profile_param: self.profile_param,
            nu: self.nu,
            nu_list: self.nu_list.clone(),
            k: self.k,
            k_list: self.k_list.clone(),
            bounds: self.bounds.clone(),
            forcing: self.forcing.clone(),
            forcing_family: self.forcing_family.clone(),
            horizon: self.horizon,
            horizon_factor: self.horizon_factor,
            amplitude: self.amplitude,
            eps_rate: self.eps_rate,
            nodes: self.nodes,
            k_max: self.k_max,
            modes: self.modes.clone(),
            seed: self.seed,
            records: self.records,
            samples: self.samples,
            checkpoint_every: self.checkpoint_every,
            c_lo: self.c_lo,
            c_hi: self.c_hi,
            bisections: self.bisections,
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("warning: {e}");
        }
    }
    let command_line = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let (kind, run) = match &cli.command {
        Command::ProfileCheck(a) => (Kind::ProfileCheck, a),
        Command::Scan(a) => (Kind::Scan, a),
        Command::LinEvolve(a) => (Kind::LinEvolve, a),
        Command::Nonlinear(a) => (Kind::Nonlinear, a),
        Command::Threshold(a) => (Kind::Threshold, a),
        Command::Selftest => return run_selftest(),
    };
    match run_experiment(kind, run, command_line) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_experiment(kind: Kind, args: &RunArgs, command_line: Vec<String>) -> Result<i32, CliError> {
    let experiment = parse_config(kind, args.config.as_deref(), args.overrides())?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("shearstab-out").join(kind.as_str()));
    let cache = ScanCache::from_env();
    let start = Instant::now();
    let outcome = execute(&experiment, cache.as_ref())?;
    let elapsed = start.elapsed().as_secs_f64();
    let manifest = emit(&out, &experiment, profile_info(experiment.profile()), &outcome, command_line, elapsed)?;
    for c in &outcome.checks {
        println!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
    }
    println!(
        "{}: {} in {elapsed:.1}s, outputs in {}",
        kind.as_str(),
        if manifest.pass { "pass" } else { "fail" },
        out.display()
    );
    Ok(manifest.exit_code)
}

fn run_selftest() -> i32 {
    let checks = selftest::run_all();
    for c in &checks {
        println!("{} {} | {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.pass) {
        0
    } else {
        1
    }
}
