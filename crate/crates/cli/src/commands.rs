//! Drivers turning a validated [`Experiment`] into an [`Outcome`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::json;

use shearstab::grid::build_grid;
use shearstab::linear::{decay_rate, omega_history, run_config, steps_for, trajectory_csv, LinConfig};
use shearstab::nonlinear::{
    init_perturbation, nl_trajectory_csv, run_nonlinear_with, run_threshold_probe, Checkpoint, InitSpec,
    NonlinearStepper, COURANT, DEFAULT_NODES, GROWTH_LIMIT, TAIL_LIMIT,
};
use shearstab::profile::ShearProfile;
use shearstab::scan::{scan, ScanConfig, ScanReport, EXPONENT_TOLERANCE};

use crate::cache::ScanCache;
use crate::config::{
    Experiment, LinEvolveConfig, NonlinearConfig, ProfileCheckConfig, ProfileSpec, ScanSettings, ThresholdSettings,
};
use crate::error::CliError;
use crate::report::{num, Check, Outcome, ProfileInfo};

pub const PROFILE_CSV_HEADER: &str = "t,c0,c_max,convexity,condition_m,d2_l2";
pub const LEDGER_CSV_HEADER: &str = "k,stability_norm";
pub const RUNS_CSV_HEADER: &str = "nu,amplitude,stable,max_growth,omega_ratio,blow_up,unresolved";

/// Runs `experiment`, consulting `cache` for scans.
pub fn execute(experiment: &Experiment, cache: Option<&ScanCache>) -> Result<Outcome, CliError> {
    match experiment {
        Experiment::ProfileCheck(c) => profile_check(c),
        Experiment::Scan(c) => scan_command(c, experiment.hash(), cache),
        Experiment::LinEvolve(c) => lin_evolve(c),
        Experiment::Nonlinear(c) => nonlinear(c),
        Experiment::Threshold(c) => threshold(c),
    }
}

/// Wall values and slope bounds of the initial profile on the default grid.
pub fn profile_info(spec: &ProfileSpec) -> ProfileInfo {
    let profile = build_grid(DEFAULT_NODES).and_then(|g| ShearProfile::from_preset(spec.preset.clone(), g));
    match profile {
        Ok(p) => {
            let v = p.validate_condition_m();
            ProfileInfo {
                id: spec.id.clone(),
                wall_values: Some(p.wall_values()),
                c0: Some(v.c0),
                c_max: Some(v.c_max),
                condition_m: Some(v.pass),
            }
        }
        Err(_) => ProfileInfo {
            id: spec.id.clone(),
            wall_values: None,
            c0: None,
            c_max: None,
            condition_m: None,
        },
    }
}

fn profile_check(c: &ProfileCheckConfig) -> Result<Outcome, CliError> {
    let grid = build_grid(c.nodes)?;
    let base = ShearProfile::from_preset(c.profile.preset.clone(), grid.clone())?;
    let initial = base.validate_condition_m();
    let horizon = c.horizon_factor * c.nu.powf(-1.0 / 3.0);
    let mut csv = String::from(PROFILE_CSV_HEADER);
    csv.push('\n');
    let mut persists = true;
    let mut first_violation = None;
    for i in 0..=c.samples {
        let t = horizon * i as f64 / c.samples as f64;
        let p = base.heat_evolve(c.nu, t)?;
        let v = p.validate_condition_m();
        if !v.pass && first_violation.is_none() {
            first_violation = Some(t);
        }
        persists &= v.pass;
        let convexity = serde_json::to_value(v.convexity).expect("enums serialize");
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            num(t),
            num(v.c0),
            num(v.c_max),
            convexity.as_str().unwrap_or_default(),
            v.pass,
            num(grid.l2_real(&p.d2u)),
        );
    }
    let mut out = Outcome {
        grid_nodes: Some(c.nodes),
        ..Default::default()
    };
    out.checks.push(Check::new("condition (M) at t=0", initial.pass));
    out.checks.push(Check::new("condition (M) along the heat flow", persists));
    out.results = json!({
        "initial": initial,
        "horizon": horizon,
        "first_violation_time": first_violation,
    });
    out.file("profile.csv", csv);
    Ok(out)
}

fn scan_command(c: &ScanSettings, hash: String, cache: Option<&ScanCache>) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let cached = cache.and_then(|cache| cache.load(&hash));
    out.cache = Some(match (cache, &cached) {
        (None, _) => "disabled",
        (Some(_), Some(_)) => "hit",
        (Some(_), None) => "miss",
    }
    .to_string());
    let report = match cached {
        Some(r) => r,
        None => {
            let grid = build_grid(DEFAULT_NODES)?;
            let profile = ShearProfile::from_preset(c.profile.preset.clone(), grid)?;
            let mut cfg = ScanConfig::new(c.nu_list.clone(), c.k_list.clone(), c.bounds.clone());
            cfg.forcing = c.forcing_family.clone();
            cfg.nodes = c.nodes;
            let report = scan(&profile, &cfg)?;
            if let Some(cache) = cache {
                // A failed store only costs the next run a recomputation.
                let _ = cache.store(&hash, &report);
            }
            report
        }
    };
    fill_scan(&mut out, &report);
    out.grid_nodes = c.nodes;
    Ok(out)
}

fn fill_scan(out: &mut Outcome, report: &ScanReport) {
    out.tolerances.insert("exponent_tolerance".into(), EXPONENT_TOLERANCE);
    for f in report.fits.iter().filter(|f| f.fitted_exponent.is_some()) {
        out.checks.push(Check::new(format!("fit {} k={}", f.bound_id, f.k), f.pass));
    }
    out.checks.push(Check::new("every lambda solved", report.failures.is_empty()));
    out.results = json!({
        "profile_id": report.profile_id,
        "lambda_policy": report.lambda_policy,
        "rows": report.rows.len(),
        "failures": report.failures,
    });
    out.file("scan.csv", report.to_csv());
    let mut fits = serde_json::to_vec_pretty(&report.fits).expect("fits serialize");
    fits.push(b'\n');
    out.file("fits.json", fits);
}

fn lin_evolve(c: &LinEvolveConfig) -> Result<Outcome, CliError> {
    let mut cfg = LinConfig::new(c.profile.preset.clone(), c.nu, c.k, c.horizon);
    cfg.eps_rate = c.eps_rate;
    cfg.forcing = c.forcing;
    cfg.nodes = c.nodes;
    cfg.amplitude = c.amplitude;
    cfg.records = c.records;
    let run = run_config(&cfg)?;
    let first = run.trajectory.first().map(|s| s.norm_om_l2).unwrap_or(0.0);
    let last = run.final_state.norm_omega();
    let finite = run
        .trajectory
        .iter()
        .all(|s| s.norm_om_l2.is_finite() && s.norm_u_inf.is_finite() && s.weighted_om.is_finite());
    let fit = decay_rate(&omega_history(&run.ledger)).ok();
    let mut out = Outcome {
        grid_nodes: Some(c.nodes),
        ..Default::default()
    };
    out.checks.push(Check::new("finite trajectory", finite));
    if c.forcing == shearstab::linear::ForcingSchedule::None && first > 0.0 {
        out.checks.push(Check::new("vorticity decays", last < first));
    }
    let ledger = &run.ledger;
    out.results = json!({
        "steps": ledger.samples.len().saturating_sub(1),
        "final_time": run.final_state.time,
        "initial_norm_omega": first,
        "final_norm_omega": last,
        "decay_rate": fit.as_ref().map(|f| f.rate),
        "decay_r2": fit.as_ref().map(|f| f.r2),
        "ledger_lhs": ledger.lhs(),
        "unforced_ratio": ledger.unforced_ratio(),
        "forced_ratio": ledger.forced_ratio(),
        "bound_ratio": ledger.bound_ratio(),
        "inviscid_damping_ratio": ledger.inviscid_damping_ratio(),
    });
    out.file("trajectory.csv", trajectory_csv(&run.trajectory));
    Ok(out)
}

fn nonlinear(c: &NonlinearConfig) -> Result<Outcome, CliError> {
    let grid = build_grid(c.nodes)?;
    let profile = ShearProfile::from_preset(c.profile.preset.clone(), grid.clone())?;
    let stepper = NonlinearStepper::for_profile(grid.clone(), c.nu, c.k_max, &profile)?;
    let spec = InitSpec::random(c.modes.clone(), c.seed);
    let init = init_perturbation(&profile, grid, c.nu, c.eps_rate, c.k_max, &spec, c.amplitude)?;
    let steps = steps_for(c.horizon, stepper.dt()).max(1);
    let mut checkpoints = Vec::new();
    let run = run_nonlinear_with(&stepper, init, steps, c.records, |i, state| {
        if c.checkpoint_every > 0 && i > 0 && i % c.checkpoint_every == 0 {
            checkpoints.push((format!("step-{i:08}.ckpt"), Checkpoint::of(state).to_bytes()));
        }
        Ok(())
    })?;
    let mut out = Outcome {
        grid_nodes: Some(c.nodes),
        blow_up: run.blow_up.is_some(),
        ..Default::default()
    };
    out.tolerances = BTreeMap::from([
        ("growth_limit".to_string(), GROWTH_LIMIT),
        ("tail_limit".to_string(), TAIL_LIMIT),
        ("courant".to_string(), COURANT),
    ]);
    out.checks.push(Check::new("stable", run.stable()));
    out.checks.push(Check::new("resolved", !run.unresolved()));
    let mut ledger = String::from(LEDGER_CSV_HEADER);
    ledger.push('\n');
    for k in 1..=c.k_max {
        let _ = writeln!(ledger, "{k},{}", num(run.ledger.mode(k)));
    }
    out.results = json!({
        "steps": steps,
        "dt": stepper.dt(),
        "final_time": run.final_state.time,
        "initial_ledger_total": run.initial_total,
        "final_ledger_total": run.ledger.total(),
        "max_growth": run.max_growth,
        "max_tail_fraction": run.max_tail,
        "blow_up": run.blow_up.map(|(t, k)| json!({"time": t, "k": k})),
    });
    out.file("trajectory.csv", nl_trajectory_csv(&run.trajectory));
    out.file("ledger.csv", ledger);
    for (name, bytes) in checkpoints {
        out.file(&name, bytes);
    }
    out.file("final.ckpt", Checkpoint::of(&run.final_state).to_bytes());
    Ok(out)
}

fn threshold(c: &ThresholdSettings) -> Result<Outcome, CliError> {
    let result = run_threshold_probe(&c.probe)?;
    let mut out = Outcome {
        grid_nodes: Some(c.probe.nodes),
        ..Default::default()
    };
    out.tolerances = BTreeMap::from([
        ("growth_limit".to_string(), GROWTH_LIMIT),
        ("tail_limit".to_string(), TAIL_LIMIT),
    ]);
    let mut csv = String::from(RUNS_CSV_HEADER);
    csv.push('\n');
    for r in &result.records {
        out.checks.push(Check::new(format!("bracket floor stable at nu={:e}", r.nu), !r.unstable_at_floor));
        for p in &r.runs {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                num(r.nu),
                num(p.amplitude),
                p.stable,
                num(p.max_growth),
                num(p.omega_ratio),
                p.blow_up,
                p.unresolved
            );
        }
    }
    out.results = serde_json::to_value(&result).expect("threshold results serialize");
    out.file("runs.csv", csv);
    Ok(out)
}
