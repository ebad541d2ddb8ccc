//! Background shear flows `U(t, y)` on the channel.
//!
//! A profile starts from an analytic preset `U_in` and evolves by the heat
//! equation with fixed wall values. The evolution is exact in time: the
//! linear interpolant of the wall values is steady, and the remainder is
//! expanded in `sin(mπy)` modes that decay like `exp(-ν m² π² t)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::ChebGrid;
use crate::linalg::C64;

pub const DEFAULT_MODES: usize = 128;

/// Uniform intervals used to project the initial profile onto sine modes.
const PROJECTION_INTERVALS: usize = 4096;

/// Named analytic initial profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "param", rename_all = "kebab-case")]
pub enum Preset {
    Couette,
    /// `y + ε sin(πy)`
    SinusConcave(f64),
    /// `y − ε sin(πy)`
    SinusConvex(f64),
    /// `U'' = −a (s + s²)`, `s = y(1−y)`, `U(0) = 0`, `U'(0) = 1`.
    PolyConcave(f64),
    PolyConvex(f64),
    /// `y + ε (sin πy + sin 3πy / 27)`
    TwoModeConcave(f64),
    /// `1/2 + tanh(a(y − 1/2)) / (2 tanh(a/2))`; has an inflection point.
    TanhMonotone(f64),
    /// Monomial coefficients, lowest degree first.
    Polynomial(Vec<f64>),
}

impl Preset {
    pub fn from_name(name: &str, param: Option<f64>) -> Result<Self> {
        let p = |default: f64| param.unwrap_or(default);
        let preset = match name {
            "couette" => Preset::Couette,
            "sinus-concave" => Preset::SinusConcave(p(0.1)),
            "sinus-convex" => Preset::SinusConvex(p(0.1)),
            "poly-concave" => Preset::PolyConcave(p(1.0)),
            "poly-convex" => Preset::PolyConvex(p(1.0)),
            "two-mode-concave" => Preset::TwoModeConcave(p(0.1)),
            "tanh-monotone" => Preset::TanhMonotone(p(2.0)),
            other => return Err(invalid(format!("unknown profile preset '{other}'"))),
        };
        if let Some(v) = param {
            if !v.is_finite() {
                return Err(invalid("profile parameter must be finite"));
            }
        }
        Ok(preset)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Couette => "couette",
            Preset::SinusConcave(_) => "sinus-concave",
            Preset::SinusConvex(_) => "sinus-convex",
            Preset::PolyConcave(_) => "poly-concave",
            Preset::PolyConvex(_) => "poly-convex",
            Preset::TwoModeConcave(_) => "two-mode-concave",
            Preset::TanhMonotone(_) => "tanh-monotone",
            Preset::Polynomial(_) => "polynomial",
        }
    }

    pub fn param(&self) -> Option<f64> {
        match *self {
            Preset::SinusConcave(e)
            | Preset::SinusConvex(e)
            | Preset::PolyConcave(e)
            | Preset::PolyConvex(e)
            | Preset::TwoModeConcave(e)
            | Preset::TanhMonotone(e) => Some(e),
            _ => None,
        }
    }

    /// Short identifier including the parameter, e.g. `sinus-concave(0.1)`.
    pub fn id(&self) -> String {
        match self {
            Preset::Polynomial(c) => format!("polynomial{c:?}"),
            p => match p.param() {
                Some(v) => format!("{}({v})", p.name()),
                None => p.name().to_string(),
            },
        }
    }

    /// The non-linear presets that satisfy the monotone single-convexity class.
    pub fn monotone_family() -> Vec<Preset> {
        vec![
            Preset::SinusConcave(0.1),
            Preset::SinusConvex(0.1),
            Preset::PolyConcave(1.0),
            Preset::PolyConvex(1.0),
            Preset::TwoModeConcave(0.1),
        ]
    }

    /// `[U, U', U'', U''', U'''']` at `y`.
    pub fn eval(&self, y: f64) -> [f64; 5] {
        match *self {
            Preset::Couette => [y, 1.0, 0.0, 0.0, 0.0],
            Preset::SinusConcave(e) => sinus(y, e),
            Preset::SinusConvex(e) => sinus(y, -e),
            Preset::PolyConcave(a) => poly_shear(y, a),
            Preset::PolyConvex(a) => poly_shear(y, -a),
            Preset::TwoModeConcave(e) => {
                let one = sinus(y, e);
                let three = sine_mode(y, 3.0, e / 27.0);
                [
                    one[0] + three[0],
                    one[1] + three[1],
                    one[2] + three[2],
                    one[3] + three[3],
                    one[4] + three[4],
                ]
            }
            Preset::TanhMonotone(a) => tanh_profile(y, a),
            Preset::Polynomial(ref c) => {
                let mut out = [0.0; 5];
                for (d, slot) in out.iter_mut().enumerate() {
                    *slot = horner_derivative(c, d, y);
                }
                out
            }
        }
    }
}

fn horner_derivative(c: &[f64], d: usize, y: f64) -> f64 {
    let mut acc = 0.0;
    for p in (d..c.len()).rev() {
        let falling: f64 = (0..d).map(|i| (p - i) as f64).product();
        acc = acc * y + c[p] * falling;
    }
    acc
}

fn sine_mode(y: f64, m: f64, amp: f64) -> [f64; 5] {
    let w = m * PI;
    let (s, c) = (w * y).sin_cos();
    [
        amp * s,
        amp * w * c,
        -amp * w * w * s,
        -amp * w * w * w * c,
        amp * w * w * w * w * s,
    ]
}

fn sinus(y: f64, e: f64) -> [f64; 5] {
    let m = sine_mode(y, 1.0, e);
    [y + m[0], 1.0 + m[1], m[2], m[3], m[4]]
}

fn poly_shear(y: f64, a: f64) -> [f64; 5] {
    let y2 = y * y;
    let y3 = y2 * y;
    let y4 = y3 * y;
    let y5 = y4 * y;
    let y6 = y5 * y;
    [
        y - a * (y3 / 6.0 - y5 / 10.0 + y6 / 30.0),
        1.0 - a * (y2 / 2.0 - y4 / 2.0 + y5 / 5.0),
        -a * (y - 2.0 * y3 + y4),
        -a * (1.0 - 6.0 * y2 + 4.0 * y3),
        -a * (-12.0 * y + 12.0 * y2),
    ]
}

fn tanh_profile(y: f64, a: f64) -> [f64; 5] {
    let scale = 1.0 / (2.0 * (0.5 * a).tanh());
    let t = (a * (y - 0.5)).tanh();
    let s = 1.0 - t * t;
    let d1 = s;
    let d2 = -2.0 * t * s;
    let d3 = s * (6.0 * t * t - 2.0);
    let d4 = t * s * (16.0 - 24.0 * t * t);
    [
        0.5 + scale * t,
        scale * a * d1,
        scale * a * a * d2,
        scale * a * a * a * d3,
        scale * a * a * a * a * d4,
    ]
}

/// Sine expansion of `U_in` minus its wall interpolant.
#[derive(Debug)]
pub struct HeatSeries {
    preset: Preset,
    left: f64,
    slope: f64,
    coef: Vec<f64>,
}

impl HeatSeries {
    pub fn new(preset: Preset, modes: usize) -> Result<Self> {
        if modes == 0 || modes >= PROJECTION_INTERVALS {
            return Err(invalid("heat series mode count out of range"));
        }
        let left = preset.eval(0.0)[0];
        let slope = preset.eval(1.0)[0] - left;
        // Sine coefficients by a DST-I of the remainder on a uniform grid,
        // computed as the FFT of its odd extension.
        let big = PROJECTION_INTERVALS;
        let mut buf = vec![C64::new(0.0, 0.0); 2 * big];
        for j in 1..big {
            let y = j as f64 / big as f64;
            let r = preset.eval(y)[0] - left - slope * y;
            buf[j] = C64::new(r, 0.0);
            buf[2 * big - j] = C64::new(-r, 0.0);
        }
        FftPlanner::new().plan_fft_forward(2 * big).process(&mut buf);
        let coef = (1..=modes).map(|m| -buf[m].im / big as f64).collect();
        Ok(Self {
            preset,
            left,
            slope,
            coef,
        })
    }

    pub fn preset(&self) -> &Preset {
        &self.preset
    }

    pub fn modes(&self) -> usize {
        self.coef.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    /// Derivatives 0..=4 of `U(t, y)`.
    ///
    /// While the highest retained mode has barely decayed, the result is
    /// `U_in` plus the decay increments, which keeps the unresolved tail of
    /// the initial data. Once it has decayed, the truncated series is used.
    pub fn eval(&self, nu: f64, t: f64, y: f64) -> [f64; 5] {
        if t == 0.0 {
            return self.preset.eval(y);
        }
        let m_top = self.coef.len() as f64;
        let keep_tail = nu * m_top * m_top * PI * PI * t < std::f64::consts::LN_2;
        let mut out = if keep_tail {
            self.preset.eval(y)
        } else {
            [self.left + self.slope * y, self.slope, 0.0, 0.0, 0.0]
        };
        for (idx, &s) in self.coef.iter().enumerate() {
            let w = (idx + 1) as f64 * PI;
            let decay = -nu * w * w * t;
            let amp = if keep_tail { s * decay.exp_m1() } else { s * decay.exp() };
            if amp == 0.0 {
                continue;
            }
            let (sn, cs) = (w * y).sin_cos();
            out[0] += amp * sn;
            out[1] += amp * w * cs;
            out[2] -= amp * w * w * sn;
            out[3] -= amp * w * w * w * cs;
            out[4] += amp * w * w * w * w * sn;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convexity {
    Linear,
    Convex,
    Concave,
    Mixed,
}

/// `U(t, ·)` sampled on a grid with certified bounds on `∂_y U`.
#[derive(Clone, Debug)]
pub struct ShearProfile {
    grid: Arc<ChebGrid>,
    series: Arc<HeatSeries>,
    nu: f64,
    t: f64,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub d2u: Vec<f64>,
    pub d3u: Vec<f64>,
    pub d4u: Vec<f64>,
    pub c0: f64,
    pub c_max: f64,
    pub convexity: Convexity,
    pub h4norm: f64,
}

impl ShearProfile {
    pub fn from_preset(preset: Preset, grid: Arc<ChebGrid>) -> Result<Self> {
        let series = Arc::new(HeatSeries::new(preset, DEFAULT_MODES)?);
        Ok(Self::sample(series, grid, 0.0, 0.0))
    }

    pub fn from_series(series: Arc<HeatSeries>, grid: Arc<ChebGrid>, nu: f64, t: f64) -> Result<Self> {
        check_time(nu, t)?;
        Ok(Self::sample(series, grid, nu, t))
    }

    fn sample(series: Arc<HeatSeries>, grid: Arc<ChebGrid>, nu: f64, t: f64) -> Self {
        let n = grid.n();
        let mut d = [
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
        ];
        for (i, &y) in grid.nodes().iter().enumerate() {
            let v = series.eval(nu, t, y);
            for j in 0..5 {
                d[j][i] = v[j];
            }
        }
        let [u, du, d2u, d3u, d4u] = d;
        let h4norm = [&u, &du, &d2u, &d3u, &d4u]
            .iter()
            .map(|f| grid.l2_real(f).powi(2))
            .sum::<f64>()
            .sqrt();
        let mut p = Self {
            grid,
            series,
            nu,
            t,
            u,
            du,
            d2u,
            d3u,
            d4u,
            c0: 0.0,
            c_max: 0.0,
            convexity: Convexity::Linear,
            h4norm,
        };
        let (lo, hi) = p.certify_slope_bounds();
        p.c0 = lo;
        p.c_max = hi;
        p.convexity = p.classify();
        p
    }

    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    pub fn series(&self) -> &Arc<HeatSeries> {
        &self.series
    }

    pub fn preset(&self) -> &Preset {
        self.series.preset()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Same flow resampled on another grid.
    pub fn on_grid(&self, grid: Arc<ChebGrid>) -> Self {
        Self::sample(self.series.clone(), grid, self.nu, self.t)
    }

    /// Derivatives 0..=4 at an arbitrary `y`.
    pub fn eval(&self, y: f64) -> [f64; 5] {
        self.series.eval(self.nu, self.t, y)
    }

    pub fn wall_values(&self) -> (f64, f64) {
        (self.u[0], self.u[self.u.len() - 1])
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Field scale used for relative sign tolerances.
    pub fn scale(&self) -> f64 {
        let m = |f: &[f64]| f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        m(&self.du).max(m(&self.d2u))
    }

    /// Node extrema of `∂_y U`, refined by Newton steps on `∂²_y U = 0`
    /// around interior local extrema.
    fn certify_slope_bounds(&self) -> (f64, f64) {
        let du = &self.du;
        let y = self.grid.nodes();
        let n = du.len();
        let mut lo = du.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = du.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 1..n - 1 {
            let is_min = du[i] <= du[i - 1] && du[i] <= du[i + 1];
            let is_max = du[i] >= du[i - 1] && du[i] >= du[i + 1];
            if !is_min && !is_max {
                continue;
            }
            let (a, b) = (y[i - 1], y[i + 1]);
            let mut x = y[i];
            for _ in 0..12 {
                let v = self.eval(x);
                if v[3] == 0.0 {
                    break;
                }
                let next = (x - v[2] / v[3]).clamp(a, b);
                if (next - x).abs() < 1e-15 {
                    x = next;
                    break;
                }
                x = next;
            }
            let s = self.eval(x)[1];
            if is_min {
                lo = lo.min(s);
            }
            if is_max {
                hi = hi.max(s);
            }
        }
        (lo, hi)
    }

    fn sign_tolerance(&self) -> f64 {
        1e-10 * self.scale().max(f64::MIN_POSITIVE)
    }

    fn classify(&self) -> Convexity {
        let tol = self.sign_tolerance();
        let inner = &self.d2u[1..self.d2u.len() - 1];
        let max = inner.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = inner.iter().cloned().fold(f64::INFINITY, f64::min);
        if max.abs() <= tol && min.abs() <= tol {
            Convexity::Linear
        } else if min >= -tol {
            Convexity::Convex
        } else if max <= tol {
            Convexity::Concave
        } else {
            Convexity::Mixed
        }
    }

    /// Evolves the flow by an additional time `dt` under `∂_t U = ν ∂²_y U`.
    pub fn heat_evolve(&self, nu: f64, dt: f64) -> Result<Self> {
        check_time(nu, dt)?;
        if dt == 0.0 {
            return Ok(self.clone());
        }
        if self.t > 0.0 && (self.nu - nu).abs() > 1e-15 * nu {
            return Err(invalid("profile already evolved with a different viscosity"));
        }
        Ok(Self::sample(self.series.clone(), self.grid.clone(), nu, self.t + dt))
    }

    pub fn validate_condition_m(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if !self.h4norm.is_finite() {
            violations.push("H4 norm is not finite".to_string());
        }
        if !(self.c0 > 0.0) {
            violations.push(format!("slope lower bound c0 = {:.3e} is not positive", self.c0));
        }
        if self.convexity == Convexity::Mixed {
            violations.push("second derivative changes sign".to_string());
        }
        let last = self.d2u.len() - 1;
        let wall_tol = 1e-8 * self.h4norm;
        for (name, v) in [("y=0", self.d2u[0]), ("y=1", self.d2u[last])] {
            if v.abs() > wall_tol {
                violations.push(format!("second derivative {v:.3e} at wall {name} is not zero"));
            }
        }
        ValidationReport {
            pass: violations.is_empty(),
            violations,
            c0: self.c0,
            c_max: self.c_max,
            convexity: self.convexity,
            h4norm: self.h4norm,
        }
    }

    /// Compares `U(t)` and `U(s)` against `ν |t − s| ‖U_in‖_{H⁴}`.
    pub fn regularity_check(&self, nu: f64, t: f64, s: f64) -> Result<RegularityReport> {
        check_time(nu, t)?;
        check_time(nu, s)?;
        let at = |time: f64| Self::sample(self.series.clone(), self.grid.clone(), nu, time);
        let initial = at(0.0);
        let (pt, ps) = (at(t), at(s));
        let linf = pt
            .u
            .iter()
            .zip(&ps.u)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let diff2: Vec<f64> = pt.d2u.iter().zip(&ps.d2u).map(|(a, b)| a - b).collect();
        let d2_l2 = self.grid.l2_real(&diff2);
        let reference = nu * (t - s).abs() * initial.h4norm;
        let ratio = |x: f64| if x == 0.0 { 0.0 } else { x / reference };
        Ok(RegularityReport {
            linf_diff: linf,
            d2_l2_diff: d2_l2,
            reference,
            linf_ratio: ratio(linf),
            d2_ratio: ratio(d2_l2),
        })
    }
}

/// `U(t)` and `∂²_y U(t)` on fixed nodes for repeated evaluation in time
/// steppers. Agrees with [`HeatSeries::eval`] including the tail switch.
#[derive(Clone, Debug)]
pub struct NodeEvolver {
    series: Arc<HeatSeries>,
    nu: f64,
    initial: [Vec<f64>; 2],
    linear: Vec<f64>,
    /// `sin(mπ y_j)`, mode-major.
    sines: Vec<f64>,
    n: usize,
}

impl NodeEvolver {
    pub fn new(series: Arc<HeatSeries>, nodes: &[f64], nu: f64) -> Result<Self> {
        check_time(nu, 0.0)?;
        let n = nodes.len();
        let modes = series.modes();
        let mut sines = Vec::with_capacity(n * modes);
        for m in 1..=modes {
            let w = m as f64 * PI;
            sines.extend(nodes.iter().map(|&y| (w * y).sin()));
        }
        let init: Vec<[f64; 5]> = nodes.iter().map(|&y| series.preset.eval(y)).collect();
        Ok(Self {
            initial: [init.iter().map(|v| v[0]).collect(), init.iter().map(|v| v[2]).collect()],
            linear: nodes.iter().map(|&y| series.left + series.slope * y).collect(),
            series,
            nu,
            sines,
            n,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn series(&self) -> &Arc<HeatSeries> {
        &self.series
    }

    /// `(U, ∂²_y U)` at time `t`.
    pub fn at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        if t == 0.0 || self.nu == 0.0 {
            return (self.initial[0].clone(), self.initial[1].clone());
        }
        let coef = &self.series.coef;
        let m_top = coef.len() as f64;
        let keep_tail = self.nu * m_top * m_top * PI * PI * t < std::f64::consts::LN_2;
        let (mut u, mut d2u) = if keep_tail {
            (self.initial[0].clone(), self.initial[1].clone())
        } else {
            (self.linear.clone(), vec![0.0; self.n])
        };
        for (idx, &s) in coef.iter().enumerate() {
            let w = (idx + 1) as f64 * PI;
            let decay = -self.nu * w * w * t;
            let amp = if keep_tail { s * decay.exp_m1() } else { s * decay.exp() };
            if amp == 0.0 {
                continue;
            }
            let row = &self.sines[idx * self.n..(idx + 1) * self.n];
            for ((a, b), &sn) in u.iter_mut().zip(d2u.iter_mut()).zip(row) {
                *a += amp * sn;
                *b -= amp * w * w * sn;
            }
        }
        (u, d2u)
    }
}

fn check_time(nu: f64, t: f64) -> Result<()> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(invalid("viscosity must be nonnegative and finite"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid("time must be nonnegative and finite"));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub violations: Vec<String>,
    pub c0: f64,
    pub c_max: f64,
    pub convexity: Convexity,
    pub h4norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub linf_diff: f64,
    pub d2_l2_diff: f64,
    pub reference: f64,
    pub linf_ratio: f64,
    pub d2_ratio: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn grid() -> Arc<ChebGrid> {
        build_grid(129).unwrap()
    }

    #[test]
    fn couette_is_linear_with_unit_slope() {
        let p = ShearProfile::from_preset(Preset::Couette, grid()).unwrap();
        let r = p.validate_condition_m();
        assert!(r.pass, "{:?}", r.violations);
        assert_eq!(r.convexity, Convexity::Linear);
        assert_eq!(r.c0, 1.0);
        assert_eq!(r.c_max, 1.0);
    }

    #[test]
    fn sinus_concave_bounds() {
        let p = ShearProfile::from_preset(Preset::SinusConcave(0.1), grid()).unwrap();
        let r = p.validate_condition_m();
        assert!(r.pass);
        assert_eq!(r.convexity, Convexity::Concave);
        assert!((r.c0 - (1.0 - 0.1 * PI)).abs() < 1e-12);
        assert!((r.c_max - (1.0 + 0.1 * PI)).abs() < 1e-12);
    }

    #[test]
    fn y_squared_fails_monotonicity() {
        let p = ShearProfile::from_preset(Preset::Polynomial(vec![0.0, 0.0, 1.0]), grid()).unwrap();
        let r = p.validate_condition_m();
        assert!(!r.pass);
        assert!(r.violations.iter().any(|v| v.contains("c0")));
    }

    #[test]
    fn tanh_profile_has_an_inflection() {
        let p = ShearProfile::from_preset(Preset::TanhMonotone(2.0), grid()).unwrap();
        let r = p.validate_condition_m();
        assert!(!r.pass);
        assert_eq!(r.convexity, Convexity::Mixed);
        assert!(r.c0 > 0.0);
    }

    #[test]
    fn monotone_family_passes() {
        for preset in Preset::monotone_family() {
            let p = ShearProfile::from_preset(preset.clone(), grid()).unwrap();
            let r = p.validate_condition_m();
            assert!(r.pass, "{preset:?}: {:?}", r.violations);
        }
    }

    #[test]
    fn preset_derivatives_match_spectral_differentiation() {
        let g = grid();
        for preset in Preset::monotone_family().into_iter().chain([Preset::TanhMonotone(3.0)]) {
            let p = ShearProfile::from_preset(preset.clone(), g.clone()).unwrap();
            for (f, df) in [(&p.u, &p.du), (&p.du, &p.d2u), (&p.d2u, &p.d3u), (&p.d3u, &p.d4u)] {
                let spec = g.diff_real(f);
                let scale = df.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                for (a, b) in spec.iter().zip(df.iter()) {
                    assert!((a - b).abs() <= 1e-8 * scale, "{preset:?}");
                }
            }
        }
    }

    #[test]
    fn linear_profiles_are_steady() {
        let p = ShearProfile::from_preset(Preset::Polynomial(vec![0.3, 2.0]), grid()).unwrap();
        let q = p.heat_evolve(1e-2, 37.0).unwrap();
        for (a, b) in p.u.iter().zip(&q.u) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_mode_heat_closed_form() {
        let (nu, t, eps) = (1e-3, 50.0, 0.1);
        let p = ShearProfile::from_preset(Preset::SinusConcave(eps), grid()).unwrap();
        let q = p.heat_evolve(nu, t).unwrap();
        let decay = (-nu * PI * PI * t).exp();
        for (&y, &u) in p.grid().nodes().iter().zip(&q.u) {
            assert!((u - (y + eps * decay * (PI * y).sin())).abs() < 1e-10);
        }
    }

    #[test]
    fn heat_evolution_composes() {
        let p = ShearProfile::from_preset(Preset::PolyConvex(1.0), grid()).unwrap();
        let a = p.heat_evolve(1e-3, 3.0).unwrap().heat_evolve(1e-3, 4.0).unwrap();
        let b = p.heat_evolve(1e-3, 7.0).unwrap();
        for (x, y) in a.u.iter().zip(&b.u) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(p.heat_evolve(-1.0, 1.0).is_err());
        assert!(p.heat_evolve(1e-3, -1.0).is_err());
    }

    /// Crank–Nicolson finite differences for the heat equation.
    fn fd_heat(preset: &Preset, nu: f64, t: f64, m: usize, steps: usize) -> (Vec<f64>, Vec<f64>) {
        let h = 1.0 / m as f64;
        let y: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
        let mut u: Vec<f64> = y.iter().map(|&v| preset.eval(v)[0]).collect();
        let dt = t / steps as f64;
        let r = nu * dt / (h * h);
        let inner = m - 1;
        for _ in 0..steps {
            let mut rhs = vec![0.0; inner];
            for i in 1..m {
                rhs[i - 1] = u[i] + 0.5 * r * (u[i - 1] - 2.0 * u[i] + u[i + 1]);
            }
            rhs[0] += 0.5 * r * u[0];
            rhs[inner - 1] += 0.5 * r * u[m];
            // Thomas algorithm with constant diagonals.
            let (a, b) = (-0.5 * r, 1.0 + r);
            let mut cp = vec![0.0; inner];
            let mut dp = vec![0.0; inner];
            cp[0] = a / b;
            dp[0] = rhs[0] / b;
            for i in 1..inner {
                let den = b - a * cp[i - 1];
                cp[i] = a / den;
                dp[i] = (rhs[i] - a * dp[i - 1]) / den;
            }
            let mut x = vec![0.0; inner];
            x[inner - 1] = dp[inner - 1];
            for i in (0..inner - 1).rev() {
                x[i] = dp[i] - cp[i] * x[i + 1];
            }
            u[1..m].copy_from_slice(&x);
        }
        (y, u)
    }

    #[test]
    fn concave_profile_matches_finite_difference_heat_solve() {
        let nu = 1e-3f64;
        let t = nu.powf(-1.0 / 3.0);
        let preset = Preset::PolyConcave(1.0);
        let p = ShearProfile::from_preset(preset.clone(), grid()).unwrap();
        let q = p.heat_evolve(nu, t).unwrap();
        let (y, u) = fd_heat(&preset, nu, t, 2000, 400);
        let mut err: f64 = 0.0;
        for (yy, uu) in y.iter().zip(&u) {
            err = err.max((q.eval(*yy)[0] - uu).abs());
        }
        assert!(err < 1e-6, "err {err}");
        let fd_min_slope = u
            .windows(2)
            .map(|w| (w[1] - w[0]) * 2000.0)
            .fold(f64::INFINITY, f64::min);
        assert!(fd_min_slope >= p.c0 - 1e-6);
        assert!(q.validate_condition_m().pass);
        assert!(q.c0 >= p.c0 - 1e-10);
    }

    #[test]
    fn regularity_single_mode() {
        let p = ShearProfile::from_preset(Preset::SinusConcave(0.1), grid()).unwrap();
        let r = p.regularity_check(1e-2, 1.0, 0.0).unwrap();
        let expect = 0.1 * (1.0 - (-1e-2 * PI * PI).exp());
        assert!((r.linf_diff - expect).abs() < 1e-10);
        let same = p.regularity_check(1e-2, 2.0, 2.0).unwrap();
        assert_eq!(same.linf_diff, 0.0);
        assert_eq!(same.d2_l2_diff, 0.0);
    }

    #[test]
    fn regularity_ratio_is_bounded() {
        for preset in Preset::monotone_family() {
            let p = ShearProfile::from_preset(preset, grid()).unwrap();
            for nu in [1e-2f64, 1e-3, 1e-4] {
                let gap = nu.powf(-1.0 / 3.0);
                let r = p.regularity_check(nu, 2.0 * gap, gap).unwrap();
                assert!(r.linf_ratio.is_finite() && r.linf_ratio <= 2.0, "{}", r.linf_ratio);
            }
        }
    }

    #[test]
    fn node_evolver_matches_series() {
        let series = Arc::new(HeatSeries::new(Preset::PolyConcave(1.0), DEFAULT_MODES).unwrap());
        let g = grid();
        let nu = 1e-3;
        let ev = NodeEvolver::new(series.clone(), g.nodes(), nu).unwrap();
        for t in [0.0, 1e-3, 5.0, 300.0] {
            let (u, d2u) = ev.at(t);
            for (j, &y) in g.nodes().iter().enumerate() {
                let v = series.eval(nu, t, y);
                assert!((u[j] - v[0]).abs() < 1e-13);
                assert!((d2u[j] - v[2]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tail_switch_is_continuous() {
        let series = HeatSeries::new(Preset::PolyConcave(2.0), DEFAULT_MODES).unwrap();
        let nu = 1e-4;
        let m = DEFAULT_MODES as f64;
        let t_switch = std::f64::consts::LN_2 / (nu * m * m * PI * PI);
        for y in [0.01, 0.3, 0.77] {
            let a = series.eval(nu, t_switch * (1.0 - 1e-9), y);
            let b = series.eval(nu, t_switch * (1.0 + 1e-9), y);
            assert!((a[0] - b[0]).abs() < 1e-12);
            assert!((a[2] - b[2]).abs() < 1e-8);
        }
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn slope_bounds_and_convexity_persist(
            idx in 0usize..5,
            log_nu in -5.0f64..-2.0,
            frac in 0.0f64..10.0,
        ) {
            let preset = Preset::monotone_family()[idx].clone();
            let nu = 10f64.powf(log_nu);
            let t = frac * nu.powf(-1.0 / 3.0);
            let p = ShearProfile::from_preset(preset, build_grid(65).unwrap()).unwrap();
            let q = p.heat_evolve(nu, t).unwrap();
            prop_assert!(q.c0 >= p.c0 - 1e-9);
            prop_assert!(q.c_max <= p.c_max + 1e-9);
            let tol = 1e-12 * p.scale();
            let inner = &q.d2u[1..q.d2u.len() - 1];
            match p.convexity {
                Convexity::Convex => prop_assert!(inner.iter().all(|&v| v > -tol)),
                Convexity::Concave => prop_assert!(inner.iter().all(|&v| v < tol)),
                _ => {}
            }
            let g = q.grid();
            prop_assert!(g.l2_real(&q.d2u) <= g.l2_real(&p.d2u) + 1e-10);
        }
    }
}
