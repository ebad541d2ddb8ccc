//! Acceptance gate. Each test prints one `criterion N ... PASS|FAIL` line and
//! then asserts the same verdict.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shearstab::grid::{build_grid, solve_helmholtz_dirichlet, ChebGrid, ScalarField};
use shearstab::linear::{
    calibrate_eps0, decay_rate, omega_history, run, run_config, sinh_kernel_constant, steps_for, weighted_inequality,
    ForcingSchedule, LinConfig, LinState, LinearStepper,
};
use shearstab::nonlinear::{
    init_perturbation, run_nonlinear, run_threshold_probe, InitSpec, NonlinearStepper, ThresholdConfig, DEFAULT_K_MAX,
    DEFAULT_NODES,
};
use shearstab::profile::{Preset, ShearProfile};
use shearstab::resolvent::{make_weight, resolution_nodes, ProblemParams, ResolventOperator};
use shearstab::scan::{
    coefficient_decay, far_field_lambdas, fit_exponent, scan, BoundId, Forcing, ScanConfig, ScanReport,
    EXPONENT_TOLERANCE,
};

const NU_SWEEP_LINEAR: [f64; 3] = [1e-3, 1e-4, 1e-5];
const NU_SWEEP_RESOLVENT: [f64; 3] = [1e-4, 1e-5, 1e-6];
const SPREAD_LIMIT: f64 = 3.0;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} {name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} {name} failed: {detail}");
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::MIN, f64::max);
    let lo = values.iter().cloned().fold(f64::MAX, f64::min);
    hi / lo
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn profile(preset: Preset, grid: &Arc<ChebGrid>) -> ShearProfile {
    ShearProfile::from_preset(preset, grid.clone()).unwrap()
}

#[test]
fn criterion_01_helmholtz_closed_forms() {
    let g = build_grid(129).unwrap();
    let cosh_rhs = ScalarField::from_real_fn(g.clone(), |_| -1.0);
    let sine_rhs = ScalarField::from_real_fn(g.clone(), |y| (PI * y).sin());
    let reps = 200;
    let mut err = 0.0f64;
    let start = Instant::now();
    for _ in 0..reps {
        let a = solve_helmholtz_dirichlet(&g, 1.0, &cosh_rhs).unwrap();
        let b = solve_helmholtz_dirichlet(&g, 2.0, &sine_rhs).unwrap();
        for ((u, v), &y) in a.values().iter().zip(b.values()).zip(g.nodes()) {
            err = err.max((u - (1.0 - (y - 0.5).cosh() / 0.5f64.cosh())).norm());
            err = err.max((v + (PI * y).sin() / (PI * PI + 4.0)).norm());
        }
    }
    let per_solve = start.elapsed() / (2 * reps);
    let pass = err <= 1e-10 && per_solve < Duration::from_millis(1);
    verdict(1, "helmholtz closed forms", pass, format!("max error {err:.2e}, {per_solve:?} per solve"));
}

#[test]
fn criterion_02_heat_flow_preserves_monotone_class() {
    let g = build_grid(129).unwrap();
    let (eps, nu_mode, t_mode) = (0.1, 1e-3, 50.0);
    let sine = profile(Preset::SinusConcave(eps), &g).heat_evolve(nu_mode, t_mode).unwrap();
    let decay = (-nu_mode * PI * PI * t_mode).exp();
    let closed = g
        .nodes()
        .iter()
        .zip(&sine.u)
        .map(|(&y, &u)| (u - (y + eps * decay * (PI * y).sin())).abs())
        .fold(0.0, f64::max);
    let mut bad = Vec::new();
    for preset in Preset::monotone_family() {
        let p0 = profile(preset.clone(), &g);
        for &nu in &NU_SWEEP_LINEAR {
            let horizon = 10.0 * nu.powf(-1.0 / 3.0);
            for i in 1..=40 {
                let t = horizon * i as f64 / 40.0;
                let p = p0.heat_evolve(nu, t).unwrap();
                if p.c0 < p0.c0 - 1e-9 || p.c_max > p0.c_max + 1e-9 || p.convexity != p0.convexity {
                    bad.push(format!("{} nu={nu:e} t={t:.1}", preset.id()));
                }
            }
        }
    }
    let pass = closed <= 1e-10 && bad.is_empty();
    verdict(2, "heat flow", pass, format!("closed-form error {closed:.2e}, violations {bad:?}"));
}

#[test]
fn criterion_03_decomposition_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let family = Preset::monotone_family();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let nu = 10f64.powf(rng.gen_range(-6.0..=-3.0));
        let k = [1i64, 2, 4, 8][rng.gen_range(0..4)] * if rng.gen_bool(0.5) { 1 } else { -1 };
        let g = build_grid(resolution_nodes(nu, k)).unwrap();
        let p = profile(family[trial % family.len()].clone(), &g);
        let (v0, v1) = p.wall_values();
        let lambda = rng.gen_range(v0 - 0.5..v1 + 0.5);
        let coeffs: Vec<C64> = (0..4).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let f: Vec<C64> = g
            .nodes()
            .iter()
            .map(|&y| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(m, c)| c * ((m + 1) as f64 * PI * y).sin())
                    .sum()
            })
            .collect();
        let op = ResolventOperator::new(nu, k, zero(), &p, g.clone()).unwrap();
        let sol = op.factor(lambda).unwrap().solve(&f).unwrap();
        worst = worst.max(sol.recomposition_residual());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-7 && elapsed < Duration::from_secs(5);
    verdict(3, "decomposition identity", pass, format!("worst residual {worst:.2e} over 50 triples in {elapsed:?}"));
}

#[test]
fn criterion_04_corrector_scaling() {
    let k = 1;
    let mut norms = Vec::new();
    let mut weighted = Vec::new();
    for &nu in &NU_SWEEP_RESOLVENT {
        let g = build_grid(resolution_nodes(nu, k)).unwrap();
        let p = profile(Preset::PolyConcave(1.0), &g);
        let (v0, _) = p.wall_values();
        let op = ResolventOperator::new(nu, k, zero(), &p, g.clone()).unwrap();
        let fac = op.factor(v0).unwrap();
        let w1 = &fac.corrector(1).w;
        let weight = make_weight(&ProblemParams::new(nu, k, v0).unwrap(), &g).unwrap();
        let wl2: f64 = g
            .quad()
            .iter()
            .zip(&weight.values)
            .zip(w1)
            .map(|((q, r), w)| q * r * w.norm_sqr())
            .sum::<f64>()
            .sqrt();
        norms.push((nu, g.l2(w1)));
        weighted.push(wl2 / weight.l.sqrt());
    }
    let slope = fit_exponent(&norms).unwrap().slope;
    let s = spread(&weighted);
    let pass = (-0.32..=-0.18).contains(&slope) && s <= SPREAD_LIMIT;
    verdict(4, "corrector scaling", pass, format!("exponent {slope:.3} (window [-0.32, -0.18]), weighted spread {s:.2}"));
}

fn resolvent_scan() -> &'static ScanReport {
    static REPORT: OnceLock<ScanReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let g = build_grid(129).unwrap();
        let p = profile(Preset::PolyConcave(1.0), &g);
        let cfg = ScanConfig::new(
            NU_SWEEP_RESOLVENT.to_vec(),
            vec![1, 2, 4],
            vec![BoundId::NoSlipL2, BoundId::NoSlipH1, BoundId::NoSlipHm1, BoundId::CoeffWeighted34],
        );
        scan(&p, &cfg).unwrap()
    })
}

#[test]
fn criterion_05_noslip_resolvent_bounds() {
    let start = Instant::now();
    let report = resolvent_scan();
    let elapsed = start.elapsed();
    let mut lines = Vec::new();
    let mut pass = report.failures.is_empty() && elapsed < Duration::from_secs(600);
    for bound in [BoundId::NoSlipL2, BoundId::NoSlipH1, BoundId::NoSlipHm1] {
        for k in [1, 2, 4] {
            let fit = report.fit(bound, k).unwrap();
            let slope = fit.fitted_exponent.unwrap_or(f64::NAN);
            pass &= slope.abs() <= EXPONENT_TOLERANCE;
            lines.push(format!("{bound}/k={k}: {slope:+.3}"));
        }
    }
    verdict(5, "no-slip resolvent bounds", pass, format!("{} in {elapsed:?}", lines.join(", ")));
}

#[test]
fn criterion_06_coefficient_decay() {
    let k = 1;
    let g = build_grid(129).unwrap();
    let p = profile(Preset::PolyConcave(1.0), &g);
    let lambdas = far_field_lambdas(&p, k, 8);
    let mut slopes = Vec::new();
    for &nu in &NU_SWEEP_RESOLVENT {
        slopes.push(coefficient_decay(&p, nu, k, Forcing::Sine, &lambdas, None).unwrap().slope);
    }
    let report = resolvent_scan();
    let spreads: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&k| report.fit(BoundId::CoeffWeighted34, k).unwrap().constant_spread.unwrap_or(f64::INFINITY))
        .collect();
    let pass = slopes.iter().all(|&s| s <= -0.70) && spreads.iter().all(|&s| s <= SPREAD_LIMIT);
    verdict(6, "coefficient decay", pass, format!("far-field slopes {slopes:.3?}, weighted-sup spreads {spreads:.2?}"));
}

fn eps0() -> f64 {
    static EPS0: OnceLock<f64> = OnceLock::new();
    *EPS0.get_or_init(|| calibrate_eps0().unwrap().eps0)
}

/// Rate window end in units of `ν^{-1/3}`.
const RATE_HORIZON: f64 = 10.0;

#[test]
fn criterion_07_enhanced_dissipation() {
    let eps = eps0();
    let mut pass = true;
    let mut lines = Vec::new();
    for preset in [Preset::Couette, Preset::PolyConcave(1.0)] {
        let mut rates = Vec::new();
        let mut damping = Vec::new();
        for &nu in &NU_SWEEP_LINEAR {
            let mut cfg = LinConfig::new(preset.clone(), nu, 1, RATE_HORIZON * nu.powf(-1.0 / 3.0));
            cfg.eps_rate = eps;
            let out = run_config(&cfg).unwrap();
            let fit = decay_rate(&omega_history(&out.ledger)).unwrap();
            pass &= fit.decaying;
            rates.push((nu, fit.rate));
            damping.push(out.ledger.inviscid_damping_ratio());
        }
        let slope = fit_exponent(&rates).unwrap().slope;
        let s = spread(&damping);
        pass &= (0.25..=0.41).contains(&slope) && s <= SPREAD_LIMIT;
        lines.push(format!("{}: rate exponent {slope:.3}, damping spread {s:.2}", preset.id()));
    }
    verdict(7, "enhanced dissipation", pass, lines.join("; "));
}

/// Three times the largest ratio measured over the sweep (4.4e-3 at ν = 1e-3).
const FORCED_RATIO_CAP: f64 = 1.3e-2;

#[test]
fn criterion_08_forced_bound() {
    let eps = eps0();
    let mut ratios = Vec::new();
    for &nu in &NU_SWEEP_LINEAR {
        let mut cfg = LinConfig::new(Preset::Couette, nu, 1, RATE_HORIZON * nu.powf(-1.0 / 3.0));
        cfg.eps_rate = eps;
        cfg.forcing = ForcingSchedule::DecayingSine { amplitude: 1.0 };
        ratios.push(run_config(&cfg).unwrap().ledger.bound_ratio());
    }
    let pass = ratios.iter().all(|&r| r.is_finite() && r > 0.0 && r < FORCED_RATIO_CAP);
    verdict(8, "forced space-time bound", pass, format!("ratios {:?}, cap {FORCED_RATIO_CAP:.1e}", ratios.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>()));
}

#[test]
fn criterion_09_auxiliary_inequalities() {
    let g = build_grid(257).unwrap();
    let constants: Vec<f64> = (1..=64).map(|k| sinh_kernel_constant(&g, k as f64)).collect();
    let kernel_ok = constants.iter().all(|c| (0.4..=1.1).contains(c));

    let gw = build_grid(129).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut weighted_ok = true;
    for _ in 0..100 {
        let k = rng.gen_range(1..=16) as f64;
        let coeffs: Vec<C64> = (0..8).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let omega: Vec<C64> = gw
            .nodes()
            .iter()
            .map(|&y| coeffs.iter().enumerate().map(|(m, c)| c * (m as f64 * PI * y).cos()).sum())
            .collect();
        let (lhs, rhs) = weighted_inequality(&gw, k, &omega);
        weighted_ok &= lhs <= rhs + 1e-8;
    }

    let mut h2_ok = true;
    let presets = [
        Preset::Couette,
        Preset::SinusConcave(0.1),
        Preset::SinusConvex(0.1),
        Preset::PolyConcave(1.0),
        Preset::PolyConvex(1.0),
        Preset::TwoModeConcave(0.1),
        Preset::TanhMonotone(2.0),
    ];
    for preset in presets {
        let p0 = profile(preset, &gw);
        let initial = gw.l2_real(&p0.d2u);
        for &nu in &NU_SWEEP_LINEAR {
            for i in 1..=20 {
                let t = 10.0 * nu.powf(-1.0 / 3.0) * i as f64 / 20.0;
                let p = p0.heat_evolve(nu, t).unwrap();
                h2_ok &= gw.l2_real(&p.d2u) <= initial + 1e-10;
            }
        }
    }
    let (lo, hi) = (
        constants.iter().cloned().fold(f64::MAX, f64::min),
        constants.iter().cloned().fold(f64::MIN, f64::max),
    );
    verdict(
        9,
        "auxiliary inequalities",
        kernel_ok && weighted_ok && h2_ok,
        format!("kernel constants in [{lo:.3}, {hi:.3}], weighted inequality {weighted_ok}, second-derivative decay {h2_ok}"),
    );
}

#[test]
fn criterion_10_linearization_limit() {
    let (nu, horizon, amplitude) = (1e-2, 10.0, 1e-6);
    let g = build_grid(DEFAULT_NODES).unwrap();
    let p = profile(Preset::Couette, &g);
    let k_max = DEFAULT_K_MAX;
    let modes = vec![1usize, 2, 3];
    let spec = InitSpec::random(modes.clone(), 7);
    let st = NonlinearStepper::for_profile(g.clone(), nu, k_max, &p).unwrap();
    let init = init_perturbation(&p, g.clone(), nu, 0.0, k_max, &spec, amplitude).unwrap();
    let steps = steps_for(horizon, st.dt());
    let mut linear = vec![None; k_max + 1];
    for &k in &modes {
        let ls = LinearStepper::new(g.clone(), nu, k as i64, st.dt(), p.max_abs_u()).unwrap();
        let params = ProblemParams::new(nu, k as i64, 0.0).unwrap();
        let s0 = LinState::new(params, &p, g.clone(), init.modes[k].omega.clone()).unwrap();
        linear[k] = Some(run(&ls, s0, steps, ForcingSchedule::None, 1).unwrap().final_state.omega);
    }
    let out = run_nonlinear(&st, init, steps, 1).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, mode) in out.final_state.modes.iter().enumerate() {
        let reference = linear[k].clone().unwrap_or_else(|| vec![zero(); g.n()]);
        let diff: Vec<C64> = mode.omega.iter().zip(&reference).map(|(a, b)| a - b).collect();
        num += g.l2(&diff).powi(2);
        den += g.l2(&reference).powi(2);
    }
    let deviation = (num / den).sqrt();
    verdict(10, "linearization limit", deviation < 1e-4, format!("relative deviation {deviation:.2e}"));
}

#[test]
fn criterion_11_threshold_probe() {
    let mut cfg = ThresholdConfig::new(Preset::Couette, vec![1e-3, 3e-3, 1e-2]);
    cfg.eps_rate = eps0();
    let start = Instant::now();
    let result = run_threshold_probe(&cfg).unwrap();
    let elapsed = start.elapsed();
    let floor_stable = result.records.iter().all(|r| {
        let floor = cfg.bracket(r.nu).0;
        r.runs
            .iter()
            .any(|run| (run.amplitude - floor).abs() <= 1e-12 * floor && run.stable)
    });
    let beta = result.beta_fit.as_ref().map(|b| b.beta);
    let beta_ok = beta.is_some_and(|b| (0.35..=0.65).contains(&b)) || result.no_transition_observed;
    let pass = floor_stable && beta_ok && elapsed < Duration::from_secs(7200);
    verdict(
        11,
        "threshold probe",
        pass,
        format!(
            "floor runs stable {floor_stable}, beta {beta:.3?}, no transition observed {}, {elapsed:?}",
            result.no_transition_observed
        ),
    );
}
