//! Sweeps of resolvent norm ratios over `(ν, k, λ)` with power-law fits.
//!
//! Every ratio is normalized by its predicted `ν` and `k` powers, so a
//! sharp estimate shows up as a fitted `ν`-exponent near zero.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{build_grid, ChebGrid, DirichletHelmholtz, ScalarField};
use crate::linalg::C64;
use crate::profile::ShearProfile;
use crate::resolvent::{
    delta0, layer_scale, resolution_nodes, weight_at, ResolventOperator, ResolventSolution,
};

/// Tolerance on fitted residual exponents.
pub const EXPONENT_TOLERANCE: f64 = 0.08;

/// Registered estimate families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundId {
    #[serde(rename = "wL2_navier")]
    WL2Navier,
    #[serde(rename = "wH1_navier")]
    WH1Navier,
    #[serde(rename = "wH-1_navier")]
    WHm1Navier,
    #[serde(rename = "corrector_w1")]
    CorrectorW1,
    #[serde(rename = "corrector_w2")]
    CorrectorW2,
    #[serde(rename = "corrector_weighted")]
    CorrectorWeighted,
    #[serde(rename = "coeff_L2")]
    CoeffL2,
    #[serde(rename = "coeff_H1")]
    CoeffH1,
    #[serde(rename = "coeff_H-1")]
    CoeffHm1,
    #[serde(rename = "noslip_FL2")]
    NoSlipL2,
    #[serde(rename = "noslip_FH1")]
    NoSlipH1,
    #[serde(rename = "noslip_FH-1")]
    NoSlipHm1,
    #[serde(rename = "coeff_weighted_34")]
    CoeffWeighted34,
}

impl BoundId {
    pub fn all() -> [BoundId; 13] {
        use BoundId::*;
        [
            WL2Navier,
            WH1Navier,
            WHm1Navier,
            CorrectorW1,
            CorrectorW2,
            CorrectorWeighted,
            CoeffL2,
            CoeffH1,
            CoeffHm1,
            NoSlipL2,
            NoSlipH1,
            NoSlipHm1,
            CoeffWeighted34,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        use BoundId::*;
        match self {
            WL2Navier => "wL2_navier",
            WH1Navier => "wH1_navier",
            WHm1Navier => "wH-1_navier",
            CorrectorW1 => "corrector_w1",
            CorrectorW2 => "corrector_w2",
            CorrectorWeighted => "corrector_weighted",
            CoeffL2 => "coeff_L2",
            CoeffH1 => "coeff_H1",
            CoeffHm1 => "coeff_H-1",
            NoSlipL2 => "noslip_FL2",
            NoSlipH1 => "noslip_FH1",
            NoSlipHm1 => "noslip_FH-1",
            CoeffWeighted34 => "coeff_weighted_34",
        }
    }

    /// Whether the ratio depends on the forcing at all.
    pub fn uses_forcing(&self) -> bool {
        !matches!(
            self,
            BoundId::CorrectorW1 | BoundId::CorrectorW2 | BoundId::CorrectorWeighted
        )
    }
}

impl std::fmt::Display for BoundId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundId::all()
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown bound id '{s}'")))
    }
}

/// Members of the forcing family. Widths scale with the critical-layer
/// width `ν^{1/3}|k|^{-1/3}`; localized shapes sit where `V(y) = λ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Forcing {
    Sine,
    SmoothedSign,
    CriticalBump,
    CriticalDipole,
    Zero,
}

impl Forcing {
    /// Default family: smooth, step-like and critical-layer localized.
    pub fn standard_family() -> Vec<Forcing> {
        vec![
            Forcing::Sine,
            Forcing::SmoothedSign,
            Forcing::CriticalBump,
            Forcing::CriticalDipole,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Forcing::Sine => "sine",
            Forcing::SmoothedSign => "smoothed-sign",
            Forcing::CriticalBump => "critical-bump",
            Forcing::CriticalDipole => "critical-dipole",
            Forcing::Zero => "zero",
        }
    }

    /// Node values on `grid` for the problem `(ν, k, λ)`.
    pub fn sample(&self, grid: &ChebGrid, profile: &ShearProfile, nu: f64, k: i64, lambda: f64) -> Vec<C64> {
        let width = delta0(nu, k);
        let y = grid.nodes();
        let real: Vec<f64> = match self {
            Forcing::Sine => y.iter().map(|&y| (std::f64::consts::PI * y).sin()).collect(),
            Forcing::SmoothedSign => y.iter().map(|&y| ((y - 0.5) / width).tanh()).collect(),
            Forcing::CriticalBump => {
                let c = critical_point(profile, lambda);
                y.iter().map(|&y| (-((y - c) / width).powi(2)).exp()).collect()
            }
            Forcing::CriticalDipole => {
                let c = critical_point(profile, lambda);
                y.iter()
                    .map(|&y| {
                        let s = (y - c) / width;
                        -2.0 * s * (-s * s).exp()
                    })
                    .collect()
            }
            Forcing::Zero => vec![0.0; y.len()],
        };
        real.into_iter().map(|v| C64::new(v, 0.0)).collect()
    }
}

impl FromStr for Forcing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Forcing::Sine,
            Forcing::SmoothedSign,
            Forcing::CriticalBump,
            Forcing::CriticalDipole,
            Forcing::Zero,
        ]
        .into_iter()
        .find(|f| f.as_str() == s)
        .ok_or_else(|| invalid(format!("unknown forcing '{s}'")))
    }
}

/// Point where `V(y) = λ`, clamped to the walls.
pub fn critical_point(profile: &ShearProfile, lambda: f64) -> f64 {
    let v = |y: f64| profile.eval(y)[0];
    let (v0, v1) = (v(0.0), v(1.0));
    let rising = v1 >= v0;
    let below = |x: f64| if rising { x < lambda } else { x > lambda };
    if !below(v0) {
        return 0.0;
    }
    if below(v1) {
        return 1.0;
    }
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if below(v(m)) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// How the spectral parameter is sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaPolicy {
    /// 32 uniform points on `[V(0) − 2/|k|, V(1) + 2/|k|]`, 16 points within
    /// `5ν^{1/3}|k|^{-1/3}` of each wall value, and both wall values.
    Standard,
    /// Fixed list, used as given.
    Explicit(Vec<f64>),
}

impl LambdaPolicy {
    pub fn describe(&self) -> String {
        match self {
            LambdaPolicy::Standard => {
                "32 uniform on [V(0)-2/|k|, V(1)+2/|k|] + 16 within 5*delta0 of each wall value + V(0), V(1)"
                    .to_string()
            }
            LambdaPolicy::Explicit(v) => format!("explicit list of {} values", v.len()),
        }
    }

    pub fn points(&self, profile: &ShearProfile, nu: f64, k: i64) -> Result<Vec<f64>> {
        match self {
            LambdaPolicy::Standard => Ok(standard_lambdas(profile, nu, k)),
            LambdaPolicy::Explicit(v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("explicit lambda list must be nonempty and finite"));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Sorted, deduplicated standard `λ` grid.
pub fn standard_lambdas(profile: &ShearProfile, nu: f64, k: i64) -> Vec<f64> {
    let (v0, v1) = profile.wall_values();
    let (lo_wall, hi_wall) = (v0.min(v1), v0.max(v1));
    let reach = 2.0 / k.unsigned_abs() as f64;
    let (lo, hi) = (lo_wall - reach, hi_wall + reach);
    let mut out: Vec<f64> = (0..32).map(|i| lo + (hi - lo) * i as f64 / 31.0).collect();
    let near = 5.0 * delta0(nu, k);
    for wall in [v0, v1] {
        out.push(wall);
        for i in 1..=8 {
            let s = near * i as f64 / 8.0;
            out.push(wall - s);
            out.push(wall + s);
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    out
}

/// Sweep description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanConfig {
    pub nu_grid: Vec<f64>,
    pub k_grid: Vec<i64>,
    pub bounds: Vec<BoundId>,
    pub forcing: Vec<Forcing>,
    pub lambda: LambdaPolicy,
    /// Fixed node count; the resolution policy is used when absent.
    pub nodes: Option<usize>,
}

impl ScanConfig {
    pub fn new(nu_grid: Vec<f64>, k_grid: Vec<i64>, bounds: Vec<BoundId>) -> Self {
        Self {
            nu_grid,
            k_grid,
            bounds,
            forcing: Forcing::standard_family(),
            lambda: LambdaPolicy::Standard,
            nodes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu_grid.is_empty() || self.nu_grid.iter().any(|&nu| !(nu > 0.0) || !nu.is_finite()) {
            return Err(invalid("nu must be positive"));
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return Err(invalid("k grid must be nonempty and exclude 0"));
        }
        if self.bounds.is_empty() {
            return Err(invalid("no bounds requested"));
        }
        if self.forcing.is_empty() {
            return Err(invalid("forcing family is empty"));
        }
        if let Some(n) = self.nodes {
            if n < 8 {
                return Err(invalid("at least 8 nodes are required"));
            }
        }
        Ok(())
    }
}

/// Sup over `λ` and the forcing family at one `(ν, k, bound)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub nu: f64,
    pub k: i64,
    pub bound_id: BoundId,
    /// NaN when every `λ` failed.
    pub sup_ratio: f64,
    pub argmax_lambda: f64,
    pub n_grid: usize,
}

/// Power-law fit of `sup_ratio` against `ν` for one `(bound, k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub bound_id: BoundId,
    pub k: i64,
    pub fitted_exponent: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub admissible_range: [f64; 2],
    /// `max / min` of the valid sup ratios.
    pub constant_spread: Option<f64>,
    pub points: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub nu: f64,
    pub k: i64,
    pub lambda: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub profile_id: String,
    pub nu_grid: Vec<f64>,
    pub k_grid: Vec<i64>,
    pub lambda_policy: String,
    pub forcing: Vec<Forcing>,
    pub rows: Vec<ScanRow>,
    pub fits: Vec<FitRecord>,
    pub failures: Vec<FailureRecord>,
}

pub const CSV_HEADER: &str = "nu,k,bound_id,sup_ratio,argmax_lambda,n_grid";

impl ScanReport {
    /// One line per row, fixed order, shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:e},{},{},{:e},{:e},{}",
                r.nu, r.k, r.bound_id, r.sup_ratio, r.argmax_lambda, r.n_grid
            );
        }
        s
    }

    pub fn fit(&self, bound: BoundId, k: i64) -> Option<&FitRecord> {
        self.fits.iter().find(|f| f.bound_id == bound && f.k == k)
    }

    pub fn row(&self, bound: BoundId, nu: f64, k: i64) -> Option<&ScanRow> {
        self.rows
            .iter()
            .find(|r| r.bound_id == bound && r.nu == nu && r.k == k)
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `y ≈ e^{intercept} x^{slope}` from positive samples.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<PowerFit> {
    if points.len() < 3 {
        return Err(Error::FitUnavailable(format!("{} points, need at least 3", points.len())));
    }
    if points
        .iter()
        .any(|&(x, y)| !(x > 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite())
    {
        return Err(Error::FitUnavailable("samples must be positive and finite".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let spread = lx.iter().fold(0.0f64, |a, x| a.max((x - mx).abs()));
    if spread <= 1e-12 * (1.0 + mx.abs()) {
        return Err(Error::FitUnavailable("x values are degenerate".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(PowerFit { slope, intercept, r2 })
}

/// Norms entering the ratios for one `(λ, F)` pair.
struct Measured {
    f_l2: f64,
    f_h1: f64,
    f_dual: f64,
    u_na: f64,
    w_na: f64,
    w_na_l1: f64,
    w_na_h1: f64,
    shifted_w_na: f64,
    w: f64,
    weighted_w: f64,
    c1: f64,
    c2: f64,
}

struct Correctors {
    w1: f64,
    w2: f64,
    weighted: f64,
}

struct Scales {
    nu: f64,
    k: f64,
    lambda: f64,
    v0: f64,
    v1: f64,
    l: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn forcing_ratio(bound: BoundId, s: &Scales, m: &Measured) -> f64 {
    let (nu, k) = (s.nu, s.k);
    let c = m.c1 + m.c2;
    let noslip_lhs = nu.powf(0.25) * k.sqrt() * m.w + nu.powf(1.0 / 6.0) * k.cbrt() * m.weighted_w;
    match bound {
        BoundId::WL2Navier => ratio(
            nu.powf(1.0 / 6.0) * k.powf(4.0 / 3.0) * m.u_na
                + nu.cbrt() * k.powf(2.0 / 3.0) * m.w_na
                + nu.powf(2.0 / 3.0) * k.cbrt() * m.w_na_h1,
            m.f_l2,
        ),
        BoundId::WH1Navier => ratio(
            nu.powf(1.0 / 6.0) * k.powf(4.0 / 3.0) * m.w_na
                + nu.powf(1.0 / 12.0) * k.powf(5.0 / 3.0) * m.w_na_l1
                + k * k * m.shifted_w_na,
            m.f_h1,
        ),
        BoundId::WHm1Navier => ratio(
            nu.sqrt() * k * m.u_na + nu.powf(2.0 / 3.0) * k.cbrt() * m.w_na + nu * m.w_na_h1,
            m.f_dual,
        ),
        BoundId::CoeffL2 => ratio(c, nu.powf(-0.25) / k * m.f_l2),
        BoundId::CoeffH1 => ratio(c, nu.powf(-1.0 / 12.0) * k.powf(-5.0 / 3.0) * m.f_h1),
        BoundId::CoeffHm1 => ratio(c, nu.powf(-7.0 / 12.0) * k.powf(-2.0 / 3.0) * m.f_dual),
        BoundId::NoSlipL2 => ratio(noslip_lhs, nu.powf(-1.0 / 6.0) / k.cbrt() * m.f_l2),
        BoundId::NoSlipH1 => ratio(noslip_lhs, nu.powf(-1.0 / 12.0) * k.powf(-7.0 / 6.0) * m.f_h1),
        BoundId::NoSlipHm1 => ratio(noslip_lhs, nu.powf(-0.5) * m.f_dual),
        BoundId::CoeffWeighted34 => ratio(
            (1.0 + (k * (s.lambda - s.v0)).abs()).powf(0.75) * m.c1
                + (1.0 + (k * (s.lambda - s.v1)).abs()).powf(0.75) * m.c2,
            nu.powf(-0.5) / k.sqrt() * m.f_dual,
        ),
        BoundId::CorrectorW1 | BoundId::CorrectorW2 | BoundId::CorrectorWeighted => 0.0,
    }
}

fn corrector_ratio(bound: BoundId, s: &Scales, c: &Correctors) -> f64 {
    match bound {
        BoundId::CorrectorW1 => c.w1 / (s.nu.powf(-0.25) * (1.0 + (s.k * (s.v0 - s.lambda)).abs()).powf(0.25)),
        BoundId::CorrectorW2 => c.w2 / (s.nu.powf(-0.25) * (1.0 + (s.k * (s.v1 - s.lambda)).abs()).powf(0.25)),
        BoundId::CorrectorWeighted => c.weighted / s.l.sqrt(),
        _ => 0.0,
    }
}

fn weighted_l2(grid: &ChebGrid, weight: &[f64], f: &[C64]) -> f64 {
    grid.quad()
        .iter()
        .zip(weight)
        .zip(f)
        .map(|((q, r), v)| q * r * v.norm_sqr())
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

struct Context<'a> {
    grid: &'a ChebGrid,
    profile: &'a ShearProfile,
    helm: &'a DirichletHelmholtz,
    weight: &'a [f64],
    k: f64,
}

fn measure(cx: &Context<'_>, lambda: f64, f: &[C64], sol: &ResolventSolution) -> Measured {
    let (grid, k) = (cx.grid, cx.k);
    let shifted: Vec<C64> = sol
        .w_na
        .iter()
        .zip(&cx.profile.u)
        .map(|(w, v)| w * (v - lambda))
        .collect();
    let abs_w: Vec<f64> = sol.w_na.iter().map(|w| w.norm()).collect();
    Measured {
        f_l2: grid.l2(f),
        f_h1: grid.h1k(f, k),
        f_dual: cx.helm.dual_norm(f),
        u_na: grid.h1k(&sol.phi_na, k),
        w_na: grid.l2(&sol.w_na),
        w_na_l1: grid.integrate_real(&abs_w),
        w_na_h1: grid.h1k(&sol.w_na, k),
        shifted_w_na: grid.l2(&shifted),
        w: grid.l2(&sol.w),
        weighted_w: weighted_l2(grid, cx.weight, &sol.w),
        c1: sol.c1.norm(),
        c2: sol.c2.norm(),
    }
}

struct LambdaSample {
    lambda: f64,
    ratios: Vec<f64>,
}

/// Sweeps `config` for `profile`, which is resampled on each `(ν, k)` grid.
pub fn scan(profile: &ShearProfile, config: &ScanConfig) -> Result<ScanReport> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let zero = C64::new(0.0, 0.0);
    for &nu in &config.nu_grid {
        for &k in &config.k_grid {
            let n = config.nodes.unwrap_or_else(|| resolution_nodes(nu, k));
            let grid = build_grid(n)?;
            let op = ResolventOperator::new(nu, k, zero, profile, grid.clone())?;
            let local = op.profile();
            let (v0, v1) = local.wall_values();
            let l = layer_scale(nu, k);
            let weight: Vec<f64> = grid.nodes().iter().map(|&y| weight_at(l, y)).collect();
            let lambdas = config.lambda.points(local, nu, k)?;
            let kf = k.unsigned_abs() as f64;
            let helm = DirichletHelmholtz::new(grid.clone(), kf);
            let cx = Context {
                grid: &grid,
                profile: local,
                helm: &helm,
                weight: &weight,
                k: kf,
            };
            let samples: Vec<std::result::Result<LambdaSample, Error>> = lambdas
                .par_iter()
                .map(|&lambda| {
                    let fac = op.factor(lambda)?;
                    let s = Scales { nu, k: kf, lambda, v0, v1, l };
                    let corr = Correctors {
                        w1: grid.l2(&fac.corrector(1).w),
                        w2: grid.l2(&fac.corrector(2).w),
                        weighted: weighted_l2(&grid, &weight, &fac.corrector(1).w)
                            + weighted_l2(&grid, &weight, &fac.corrector(2).w),
                    };
                    let mut ratios: Vec<f64> = config
                        .bounds
                        .iter()
                        .map(|&b| corrector_ratio(b, &s, &corr))
                        .collect();
                    if config.bounds.iter().any(BoundId::uses_forcing) {
                        for shape in &config.forcing {
                            let f = shape.sample(&grid, local, nu, k, lambda);
                            let sol = fac.solve(&f)?;
                            let m = measure(&cx, lambda, &f, &sol);
                            for (r, &b) in ratios.iter_mut().zip(&config.bounds) {
                                if b.uses_forcing() {
                                    *r = r.max(forcing_ratio(b, &s, &m));
                                }
                            }
                        }
                    }
                    Ok(LambdaSample { lambda, ratios })
                })
                .collect();
            let mut ok = Vec::with_capacity(samples.len());
            for (res, &lambda) in samples.into_iter().zip(&lambdas) {
                match res {
                    Ok(s) => ok.push(s),
                    Err(Error::SolverFailure { reason, .. }) => failures.push(FailureRecord {
                        nu,
                        k,
                        lambda,
                        reason,
                    }),
                    Err(e) => return Err(e),
                }
            }
            for (bi, &bound) in config.bounds.iter().enumerate() {
                let mut best = (f64::NAN, f64::NAN);
                for s in &ok {
                    let r = s.ratios[bi];
                    if best.0.is_nan() || r > best.0 {
                        best = (r, s.lambda);
                    }
                }
                rows.push(ScanRow {
                    nu,
                    k,
                    bound_id: bound,
                    sup_ratio: best.0,
                    argmax_lambda: best.1,
                    n_grid: n,
                });
            }
        }
    }
    let fits = fit_rows(&rows, &config.bounds, &config.k_grid);
    Ok(ScanReport {
        profile_id: profile.preset().id(),
        nu_grid: config.nu_grid.clone(),
        k_grid: config.k_grid.clone(),
        lambda_policy: config.lambda.describe(),
        forcing: config.forcing.clone(),
        rows,
        fits,
        failures,
    })
}

fn fit_rows(rows: &[ScanRow], bounds: &[BoundId], ks: &[i64]) -> Vec<FitRecord> {
    let mut fits = Vec::new();
    for &bound in bounds {
        for &k in ks {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.bound_id == bound && r.k == k && r.sup_ratio.is_finite() && r.sup_ratio > 0.0)
                .map(|r| (r.nu, r.sup_ratio))
                .collect();
            let spread = (!pts.is_empty()).then(|| {
                let hi = pts.iter().fold(0.0f64, |a, p| a.max(p.1));
                let lo = pts.iter().fold(f64::INFINITY, |a, p| a.min(p.1));
                hi / lo
            });
            let fit = fit_exponent(&pts).ok();
            fits.push(FitRecord {
                bound_id: bound,
                k,
                fitted_exponent: fit.map(|f| f.slope),
                intercept: fit.map(|f| f.intercept),
                r2: fit.map(|f| f.r2),
                admissible_range: [-EXPONENT_TOLERANCE, EXPONENT_TOLERANCE],
                constant_spread: spread,
                points: pts.len(),
                pass: fit.is_some_and(|f| f.slope.abs() <= EXPONENT_TOLERANCE),
            });
        }
    }
    fits
}

/// `λ` values beyond `V(1) + 2/|k|`, geometrically spaced out to `V(1) + 200/|k|`.
pub fn far_field_lambdas(profile: &ShearProfile, k: i64, count: usize) -> Vec<f64> {
    let (v0, v1) = profile.wall_values();
    let top = v0.max(v1);
    let unit = 1.0 / k.unsigned_abs() as f64;
    let count = count.max(2);
    (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            top + unit * 3.0 * (200.0f64 / 3.0).powf(t)
        })
        .collect()
}

/// Fit of `|c1|` against `1 + |k(λ − V(0))|` for a fixed forcing shape.
pub fn coefficient_decay(
    profile: &ShearProfile,
    nu: f64,
    k: i64,
    forcing: Forcing,
    lambdas: &[f64],
    nodes: Option<usize>,
) -> Result<PowerFit> {
    if k == 0 {
        return Err(invalid("k must be nonzero"));
    }
    let n = nodes.unwrap_or_else(|| resolution_nodes(nu, k));
    let grid = build_grid(n)?;
    let op = ResolventOperator::new(nu, k, C64::new(0.0, 0.0), profile, grid.clone())?;
    let local = op.profile();
    let (v0, _) = local.wall_values();
    let kf = k.unsigned_abs() as f64;
    let mut pts = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let fac = op.factor(lambda)?;
        let f = forcing.sample(&grid, local, nu, k, lambda);
        let na = fac.solve_navier(&f)?;
        let field = ScalarField::new(grid.clone(), na.w_na)?;
        let (c1, _) = crate::resolvent::coefficients(&field, kf)?;
        pts.push((1.0 + (kf * (lambda - v0)).abs(), c1.norm()));
    }
    fit_exponent(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Preset;

    fn profile(preset: Preset) -> ShearProfile {
        ShearProfile::from_preset(preset, build_grid(129).unwrap()).unwrap()
    }

    #[test]
    fn catalog_round_trips() {
        for b in BoundId::all() {
            assert_eq!(b.as_str().parse::<BoundId>().unwrap(), b);
            let j = serde_json::to_string(&b).unwrap();
            assert_eq!(j, format!("\"{}\"", b.as_str()));
        }
        assert!("nope".parse::<BoundId>().is_err());
    }

    #[test]
    fn fit_identity_line() {
        let pts: Vec<_> = (1..=5).map(|i| (i as f64, i as f64)).collect();
        let f = fit_exponent(&pts).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-14);
        assert!(f.intercept.abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fit_exact_power_law() {
        let pts: Vec<_> = [0.1, 0.5, 2.0, 7.0, 30.0]
            .iter()
            .map(|&x: &f64| (x, 3.0 * x.powf(-0.5)))
            .collect();
        let f = fit_exponent(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_perturbed_power_law() {
        let pts: Vec<_> = (0..40)
            .map(|i| {
                let x = 10f64.powf(-3.0 + 6.0 * i as f64 / 39.0);
                (x, x.powf(-0.5) * (1.0 + 0.05 * x.ln().sin()))
            })
            .collect();
        let f = fit_exponent(&pts).unwrap();
        assert!((-0.56..=-0.44).contains(&f.slope), "slope {}", f.slope);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        assert!(matches!(fit_exponent(&[(1.0, 1.0), (2.0, 2.0)]), Err(Error::FitUnavailable(_))));
        assert!(matches!(
            fit_exponent(&[(2.0, 1.0), (2.0, 2.0), (2.0, 3.0)]),
            Err(Error::FitUnavailable(_))
        ));
        assert!(matches!(
            fit_exponent(&[(1.0, 1.0), (2.0, 0.0), (3.0, 3.0)]),
            Err(Error::FitUnavailable(_))
        ));
    }

    #[test]
    fn standard_grid_covers_range() {
        let p = profile(Preset::PolyConcave(1.0));
        for k in [1, 2, 4, 8] {
            let lam = standard_lambdas(&p, 1e-5, k);
            let (v0, v1) = p.wall_values();
            assert!(lam.len() >= 64);
            assert!(lam.windows(2).all(|w| w[0] < w[1]));
            assert!(lam.contains(&v0) && lam.contains(&v1));
            let reach = 2.0 / k as f64;
            assert!((lam[0] - (v0 - reach)).abs() < 1e-14);
            assert!((lam[lam.len() - 1] - (v1 + reach)).abs() < 1e-14);
            let near = lam
                .iter()
                .filter(|&&l| (l - v0).abs() <= 5.0 * delta0(1e-5, k) + 1e-15 || (l - v1).abs() <= 5.0 * delta0(1e-5, k) + 1e-15)
                .count();
            assert!(near >= 32);
        }
    }

    #[test]
    fn critical_point_inverts_profile() {
        let p = profile(Preset::PolyConcave(1.0));
        let (v0, v1) = p.wall_values();
        for t in [0.1, 0.37, 0.8] {
            let lam = v0 + t * (v1 - v0);
            let y = critical_point(&p, lam);
            assert!((p.eval(y)[0] - lam).abs() < 1e-12);
        }
        assert_eq!(critical_point(&p, v0 - 1.0), 0.0);
        assert_eq!(critical_point(&p, v1 + 1.0), 1.0);
    }

    fn small_config(bounds: Vec<BoundId>, forcing: Vec<Forcing>) -> ScanConfig {
        let mut c = ScanConfig::new(vec![1e-3, 3e-4, 1e-4], vec![1], bounds);
        c.forcing = forcing;
        c.lambda = LambdaPolicy::Explicit(vec![-0.5, 0.0, 0.3, 0.9, 1.6]);
        c.nodes = Some(97);
        c
    }

    #[test]
    fn zero_forcing_gives_zero_ratios() {
        let p = profile(Preset::Couette);
        let bounds: Vec<_> = BoundId::all().into_iter().filter(BoundId::uses_forcing).collect();
        let rep = scan(&p, &small_config(bounds, vec![Forcing::Zero])).unwrap();
        assert!(rep.rows.iter().all(|r| r.sup_ratio == 0.0));
        assert!(rep.fits.iter().all(|f| f.fitted_exponent.is_none() && !f.pass));
    }

    #[test]
    fn report_invariants_and_determinism() {
        let p = profile(Preset::PolyConcave(1.0));
        let cfg = small_config(BoundId::all().to_vec(), Forcing::standard_family());
        let a = scan(&p, &cfg).unwrap();
        let b = scan(&p, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 13 * 3);
        assert!(a.failures.is_empty());
        for r in &a.rows {
            assert!(r.sup_ratio > 0.0 && r.sup_ratio.is_finite(), "{r:?}");
            assert!((-0.5..=1.6).contains(&r.argmax_lambda));
        }
        for f in &a.fits {
            assert_eq!(f.points, 3);
            assert!(f.fitted_exponent.is_some());
        }
        let csv = a.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + a.rows.len());
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 6));
    }

    #[test]
    fn navier_norm_has_no_spikes_in_lambda() {
        let p = profile(Preset::PolyConcave(1.0));
        let (nu, k) = (1e-4, 1);
        let grid = build_grid(resolution_nodes(nu, k)).unwrap();
        let op = ResolventOperator::new(nu, k, C64::new(0.0, 0.0), &p, grid.clone()).unwrap();
        let lam = standard_lambdas(op.profile(), nu, k);
        let f = Forcing::Sine.sample(&grid, op.profile(), nu, k, 0.0);
        let norms: Vec<f64> = lam
            .iter()
            .map(|&l| grid.l2(&op.factor(l).unwrap().solve_navier(&f).unwrap().w_na))
            .collect();
        for i in 1..norms.len() - 1 {
            assert!(norms[i].is_finite());
            assert!(norms[i] <= 1e3 * norms[i - 1].max(norms[i + 1]));
        }
    }

    #[test]
    fn far_field_coefficients_decay() {
        let p = profile(Preset::PolyConcave(1.0));
        let lam = far_field_lambdas(&p, 1, 8);
        let fit = coefficient_decay(&p, 1e-4, 1, Forcing::Sine, &lam, None).unwrap();
        assert!(fit.slope <= -0.70, "slope {}", fit.slope);
    }

    #[test]
    fn invalid_configs_rejected() {
        let p = profile(Preset::Couette);
        let mut c = small_config(vec![BoundId::CoeffL2], vec![Forcing::Sine]);
        c.nu_grid = vec![-1.0];
        assert!(scan(&p, &c).is_err());
        let mut c = small_config(vec![BoundId::CoeffL2], vec![Forcing::Sine]);
        c.k_grid = vec![0];
        assert!(scan(&p, &c).is_err());
    }
}
