//! Time stepping of one Fourier mode of the linearized perturbation system
//!
//! `∂_t ω − ν(∂²_y − k²)ω + ikUω − ik ∂²_yU ψ = −ik f₁ − ∂_y f₂`,
//! `(∂²_y − k²)ψ = ω`, `ψ = ∂_yψ = 0` at both walls,
//!
//! with `U(t, y)` the heat-evolved background flow. Diffusion is
//! Crank–Nicolson, everything else second-order Adams–Bashforth. The two
//! clamped conditions are enforced by an influence-matrix correction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{ChebGrid, DirichletHelmholtz};
use crate::linalg::{matvec_c, C64, I};
use crate::profile::{NodeEvolver, Preset, ShearProfile};
use crate::resolvent::{sinh_kernels, ProblemParams};

/// Weight `1 − (2y − 1)² = 4y(1 − y)` of the weighted vorticity norm.
pub fn wall_weight(y: f64) -> f64 {
    4.0 * y * (1.0 - y)
}

/// Step used when none is given: ten steps per `ν^{-1/3}` and an advective
/// Courant number of 0.1.
pub fn default_dt(nu: f64, k: i64, max_speed: f64) -> f64 {
    let layer = 0.1 * nu.powf(-1.0 / 3.0);
    let kf = k.unsigned_abs() as f64;
    if kf * max_speed > 0.0 {
        layer.min(0.1 / (kf * max_speed))
    } else {
        layer
    }
}

fn check_step(nu: f64, k: i64, dt: f64, max_speed: f64) -> Result<()> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(invalid("nu must be positive"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("time step must be positive"));
    }
    let kf = k.unsigned_abs() as f64;
    if kf * max_speed * dt > 0.5 {
        return Err(invalid(format!(
            "advective Courant number {:.3} exceeds 0.5",
            kf * max_speed * dt
        )));
    }
    if kf > 0.0 && dt > 0.5 / (nu * kf * kf) {
        return Err(invalid("time step exceeds 0.5/(nu k^2)"));
    }
    Ok(())
}

/// Vorticity forcing `−ik f₁ − ∂_y f₂`.
pub fn forcing_vorticity(grid: &ChebGrid, k: i64, f1: &[C64], f2: &[C64]) -> Vec<C64> {
    let kf = k as f64;
    let df2 = grid.diff(f2);
    f1.iter()
        .zip(&df2)
        .map(|(a, b)| -I * kf * a - b)
        .collect()
}

/// Factorizations for one `(ν, k, dt)` on one grid.
pub struct LinearStepper {
    grid: Arc<ChebGrid>,
    nu: f64,
    k: i64,
    dt: f64,
    helm: DirichletHelmholtz,
    implicit: DirichletHelmholtz,
    homog: [Vec<C64>; 2],
    influence_inv: [[f64; 2]; 2],
    slope: [Vec<f64>; 2],
}

impl LinearStepper {
    /// `max_speed` bounds `|U|` for the advective step restriction.
    pub fn new(grid: Arc<ChebGrid>, nu: f64, k: i64, dt: f64, max_speed: f64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("the vorticity stepper needs k != 0"));
        }
        check_step(nu, k, dt, max_speed)?;
        let kf = k as f64;
        let half = 0.5 * dt * nu;
        let helm = DirichletHelmholtz::new(grid.clone(), kf);
        let implicit = DirichletHelmholtz::with_shift(grid.clone(), -half, 1.0 + half * kf * kf, kf);
        let zeros = vec![C64::new(0.0, 0.0); grid.n()];
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let homog = [
            implicit.solve_with_bc(&zeros, one, zero),
            implicit.solve_with_bc(&zeros, zero, one),
        ];
        let slope = [helm.slope_row(0), helm.slope_row(grid.last())];
        let mut m = [[0.0; 2]; 2];
        for (i, s) in slope.iter().enumerate() {
            for (j, h) in homog.iter().enumerate() {
                let re: Vec<f64> = h.iter().map(|z| z.re).collect();
                m[i][j] = row_dot_vec(s, &re);
            }
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(invalid("singular influence matrix"));
        }
        let influence_inv = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        Ok(Self {
            grid,
            nu,
            k,
            dt,
            helm,
            implicit,
            homog,
            influence_inv,
            slope,
        })
    }

    /// Stepper with [`default_dt`] for `profile`.
    pub fn for_profile(grid: Arc<ChebGrid>, nu: f64, k: i64, profile: &ShearProfile) -> Result<Self> {
        let speed = profile.max_abs_u();
        Self::new(grid, nu, k, default_dt(nu, k, speed), speed)
    }

    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn k(&self) -> i64 {
        self.k
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Dirichlet stream function of `omega`.
    pub fn stream(&self, omega: &[C64]) -> Vec<C64> {
        self.helm.solve(omega)
    }

    /// Explicit part `−ikUω + ik ∂²_yU ψ + g`.
    pub fn tendency(&self, omega: &[C64], psi: &[C64], u: &[f64], d2u: &[f64], forcing: Option<&[C64]>) -> Vec<C64> {
        let ik = I * self.k as f64;
        let mut out: Vec<C64> = omega
            .iter()
            .zip(psi)
            .zip(u.iter().zip(d2u))
            .map(|((w, p), (v, v2))| ik * (p * *v2 - w * *v))
            .collect();
        if let Some(g) = forcing {
            for (o, g) in out.iter_mut().zip(g) {
                *o += g;
            }
        }
        out
    }

    /// One CN/AB2 update of `omega` from the explicit tendencies at the
    /// current and previous steps (Euler when `prev` is absent). Returns the
    /// new vorticity and its clamped stream function.
    pub fn advance(&self, omega: &[C64], now: &[C64], prev: Option<&[C64]>) -> (Vec<C64>, Vec<C64>) {
        let kf = self.k as f64;
        let half = 0.5 * self.dt * self.nu;
        let lap = matvec_c(self.grid.d2(), omega);
        let mut rhs: Vec<C64> = omega
            .iter()
            .zip(&lap)
            .zip(now)
            .map(|((w, l), n)| w + (l - w * (kf * kf)) * half + n * self.dt)
            .collect();
        if let Some(p) = prev {
            for ((r, n), p) in rhs.iter_mut().zip(now).zip(p) {
                *r += (n - p) * (0.5 * self.dt);
            }
        }
        let zero = C64::new(0.0, 0.0);
        let mut w = self.implicit.solve_with_bc(&rhs, zero, zero);
        let s = [
            row_dot_vec_c(&self.slope[0], &w),
            row_dot_vec_c(&self.slope[1], &w),
        ];
        let m = &self.influence_inv;
        let a = -(s[0] * m[0][0] + s[1] * m[0][1]);
        let b = -(s[0] * m[1][0] + s[1] * m[1][1]);
        for ((x, h0), h1) in w.iter_mut().zip(&self.homog[0]).zip(&self.homog[1]) {
            *x += a * h0 + b * h1;
        }
        let psi = self.helm.solve(&w);
        // Wall vorticity never enters ψ, and CN leaves a neutral sign-flipping
        // mode in it; pin it to the value implied by ψ.
        let d2 = self.grid.d2();
        for r in [0, self.grid.last()] {
            let lap: C64 = (0..psi.len()).map(|j| psi[j] * d2[(r, j)]).sum();
            w[r] = lap - psi[r] * (kf * kf);
        }
        (w, psi)
    }

    /// One step of `state` with optional forcing `(f₁, f₂)` at the current time.
    pub fn step(&self, state: &LinState, forcing: Option<(&[C64], &[C64])>) -> Result<LinState> {
        self.check_state(state)?;
        let g = match forcing {
            Some((f1, f2)) => {
                if f1.len() != self.grid.n() || f2.len() != self.grid.n() {
                    return Err(invalid("forcing lives on a different grid"));
                }
                if !f1.iter().chain(f2).all(|z| z.re.is_finite() && z.im.is_finite()) {
                    return Err(invalid("forcing contains non-finite values"));
                }
                Some(forcing_vorticity(&self.grid, self.k, f1, f2))
            }
            None => None,
        };
        let now = self.tendency(&state.omega, &state.psi, &state.u, &state.d2u, g.as_deref());
        let (omega, psi) = self.advance(&state.omega, &now, state.prev.as_deref());
        let time = state.time + self.dt;
        if !omega.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::BlowUp { time, k: Some(self.k) });
        }
        let (u, d2u) = if state.frozen {
            (state.u.clone(), state.d2u.clone())
        } else {
            state.evolver.at(time)
        };
        let u1 = self.grid.diff(&psi);
        let u2 = psi.iter().map(|p| -I * self.k as f64 * p).collect();
        Ok(LinState {
            params: state.params,
            grid: state.grid.clone(),
            evolver: state.evolver.clone(),
            omega,
            psi,
            u1,
            u2,
            time,
            frozen: state.frozen,
            u,
            d2u,
            prev: Some(now),
        })
    }

    fn check_state(&self, state: &LinState) -> Result<()> {
        if !Arc::ptr_eq(&state.grid, &self.grid) && state.grid.n() != self.grid.n() {
            return Err(invalid("state and stepper use different grids"));
        }
        if state.params.k != self.k || (state.params.nu - self.nu).abs() > 1e-15 * self.nu {
            return Err(invalid("state and stepper use different (nu, k)"));
        }
        Ok(())
    }
}

fn row_dot_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn row_dot_vec_c(a: &[f64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| y * *x).sum()
}

/// One Fourier mode of the perturbation together with the background flow.
#[derive(Clone)]
pub struct LinState {
    pub params: ProblemParams,
    pub grid: Arc<ChebGrid>,
    pub evolver: Arc<NodeEvolver>,
    pub omega: Vec<C64>,
    pub psi: Vec<C64>,
    pub u1: Vec<C64>,
    pub u2: Vec<C64>,
    pub time: f64,
    /// Keeps `U` at its initial state instead of heat-evolving it.
    pub frozen: bool,
    u: Vec<f64>,
    d2u: Vec<f64>,
    prev: Option<Vec<C64>>,
}

impl LinState {
    /// State with vorticity `omega` at `t = 0`; `profile` supplies `U_in`.
    pub fn new(params: ProblemParams, profile: &ShearProfile, grid: Arc<ChebGrid>, omega: Vec<C64>) -> Result<Self> {
        params.validate()?;
        if params.k == 0 {
            return Err(invalid("the vorticity stepper needs k != 0"));
        }
        if omega.len() != grid.n() {
            return Err(invalid("vorticity lives on a different grid"));
        }
        if !omega.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(invalid("initial vorticity is not finite"));
        }
        let evolver = Arc::new(NodeEvolver::new(profile.series().clone(), grid.nodes(), params.nu)?);
        let (u, d2u) = evolver.at(0.0);
        let helm = DirichletHelmholtz::new(grid.clone(), params.k as f64);
        let psi = helm.solve(&omega);
        let u1 = grid.diff(&psi);
        let u2 = psi.iter().map(|p| -I * params.k as f64 * p).collect();
        Ok(Self {
            params,
            grid,
            evolver,
            omega,
            psi,
            u1,
            u2,
            time: 0.0,
            frozen: false,
            u,
            d2u,
            prev: None,
        })
    }

    /// State from a clamped stream function: `ω = (∂²_y − k²)ψ`.
    pub fn from_stream(params: ProblemParams, profile: &ShearProfile, grid: Arc<ChebGrid>, psi: &[C64]) -> Result<Self> {
        if psi.len() != grid.n() {
            return Err(invalid("stream function lives on a different grid"));
        }
        let kf = params.k as f64;
        let lap = grid.diff2(psi);
        let omega = lap.iter().zip(psi).map(|(a, p)| a - p * (kf * kf)).collect();
        Self::new(params, profile, grid, omega)
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// `U` and `∂²_y U` at the state time.
    pub fn background(&self) -> (&[f64], &[f64]) {
        (&self.u, &self.d2u)
    }

    /// Background flow at the state time.
    pub fn profile(&self) -> Result<ShearProfile> {
        let t = if self.frozen { 0.0 } else { self.time };
        ShearProfile::from_series(self.evolver.series().clone(), self.grid.clone(), self.params.nu, t)
    }

    pub fn norm_omega(&self) -> f64 {
        self.grid.l2(&self.omega)
    }

    /// `‖u‖² = ‖∂_yψ‖² + k²‖ψ‖²`.
    pub fn energy(&self) -> f64 {
        self.grid.l2(&self.u1).powi(2) + self.grid.l2(&self.u2).powi(2)
    }

    pub fn weighted_omega(&self) -> f64 {
        weighted_norm(&self.grid, &self.omega)
    }

    pub fn u_inf(&self) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .fold(0.0f64, |m, (a, b)| m.max((a.norm_sqr() + b.norm_sqr()).sqrt()))
    }

    /// `|∂_yψ|` at both walls.
    pub fn wall_slip(&self) -> f64 {
        self.u1[0].norm().max(self.u1[self.grid.last()].norm())
    }

    /// `|k|^{-2}‖∂_yω‖² + ‖u‖² + ‖∂_y u‖² + k²‖u‖²`.
    pub fn initial_energy(&self) -> f64 {
        let k2 = (self.params.k as f64).powi(2);
        let g = &self.grid;
        let dw = g.diff(&self.omega);
        let d2psi = g.diff2(&self.psi);
        let u_sq = self.energy();
        let du_sq = g.l2(&d2psi).powi(2) + k2 * g.l2(&self.u1).powi(2);
        g.l2(&dw).powi(2) / k2 + u_sq + du_sq + k2 * u_sq
    }
}

/// `‖√(1 − (2y−1)²) f‖_{L²}`.
pub fn weighted_norm(grid: &ChebGrid, f: &[C64]) -> f64 {
    grid.quad()
        .iter()
        .zip(grid.nodes())
        .zip(f)
        .map(|((q, &y), v)| q * wall_weight(y) * v.norm_sqr())
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// `(‖√w ∂_y u₁‖, ‖√w ω‖)` for the Dirichlet stream function of `omega`;
/// the first never exceeds the second.
pub fn weighted_inequality(grid: &Arc<ChebGrid>, k: f64, omega: &[C64]) -> (f64, f64) {
    let psi = DirichletHelmholtz::new(grid.clone(), k).solve(omega);
    let d2 = grid.diff2(&psi);
    (weighted_norm(grid, &d2), weighted_norm(grid, omega))
}

/// `|k|^{1/2}‖sinh(|k|(1−y))/sinh|k|‖_{L²}` by quadrature.
pub fn sinh_kernel_constant(grid: &ChebGrid, k: f64) -> f64 {
    let f: Vec<f64> = grid.nodes().iter().map(|&y| sinh_kernels(y, k).0).collect();
    k.abs().sqrt() * grid.l2_real(&f)
}

/// Per-step ledger input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerSample {
    pub t: f64,
    pub u_sq: f64,
    pub om_sq: f64,
    pub weighted_om: f64,
    pub u_inf: f64,
    pub forcing_sq: f64,
}

/// Running weighted space-time norms with rate `ε ν^{1/3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeLedger {
    pub nu: f64,
    pub k: i64,
    pub eps_rate: f64,
    /// `∫ e^{2εν^{1/3}t}‖u‖² dt`
    pub t_l2l2_u: f64,
    /// `∫ e^{2εν^{1/3}t}‖ω‖² dt`
    pub t_l2l2_om: f64,
    /// `max e^{εν^{1/3}t}‖√w ω‖`
    pub sup_weighted_om: f64,
    /// `max e^{εν^{1/3}t}‖u‖_{L∞}`
    pub sup_uinf: f64,
    /// `∫ e^{2εν^{1/3}t}‖(f₁, f₂)‖² dt`
    pub forcing_l2l2: f64,
    pub e_in: f64,
    pub samples: Vec<LedgerSample>,
}

impl SpaceTimeLedger {
    pub fn new(nu: f64, k: i64, eps_rate: f64, e_in: f64) -> Self {
        Self {
            nu,
            k,
            eps_rate,
            t_l2l2_u: 0.0,
            t_l2l2_om: 0.0,
            sup_weighted_om: 0.0,
            sup_uinf: 0.0,
            forcing_l2l2: 0.0,
            e_in,
            samples: Vec::new(),
        }
    }

    fn rate(&self) -> f64 {
        self.eps_rate * self.nu.cbrt()
    }

    /// Appends a sample; integrals advance by the trapezoidal rule.
    pub fn push(&mut self, s: LedgerSample) {
        let r = self.rate();
        let e = (r * s.t).exp();
        if let Some(p) = self.samples.last() {
            let ep = (r * p.t).exp();
            let h = 0.5 * (s.t - p.t);
            self.t_l2l2_u += h * (ep * ep * p.u_sq + e * e * s.u_sq);
            self.t_l2l2_om += h * (ep * ep * p.om_sq + e * e * s.om_sq);
            self.forcing_l2l2 += h * (ep * ep * p.forcing_sq + e * e * s.forcing_sq);
        }
        self.sup_weighted_om = self.sup_weighted_om.max(e * s.weighted_om);
        self.sup_uinf = self.sup_uinf.max(e * s.u_inf);
        self.samples.push(s);
    }

    /// Same samples accumulated with another rate.
    pub fn reweighted(&self, eps_rate: f64) -> Self {
        let mut l = Self::new(self.nu, self.k, eps_rate, self.e_in);
        for s in &self.samples {
            l.push(*s);
        }
        l
    }

    /// Recomputed from every `stride`-th sample and the last one.
    pub fn coarsened(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut l = Self::new(self.nu, self.k, self.eps_rate, self.e_in);
        let n = self.samples.len();
        for (i, s) in self.samples.iter().enumerate() {
            if i % stride == 0 || i + 1 == n {
                l.push(*s);
            }
        }
        l
    }

    /// `|k|²‖u‖²_{L²L²} + ν^{1/2}|k|‖ω‖²_{L²L²} + ‖√wω‖²_{L∞L²} + ‖u‖²_{L∞L∞}`, all weighted.
    pub fn lhs(&self) -> f64 {
        let k = self.k.unsigned_abs() as f64;
        k * k * self.t_l2l2_u + self.nu.sqrt() * k * self.t_l2l2_om + self.sup_weighted_om.powi(2) + self.sup_uinf.powi(2)
    }

    fn ratio(num: f64, den: f64) -> f64 {
        if num == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// `lhs / E_in`.
    pub fn unforced_ratio(&self) -> f64 {
        Self::ratio(self.lhs(), self.e_in)
    }

    /// `lhs / (ν^{-1}‖e^{εν^{1/3}t}f‖²)`.
    pub fn forced_ratio(&self) -> f64 {
        Self::ratio(self.lhs(), self.forcing_l2l2 / self.nu)
    }

    /// `lhs / (E_in + ν^{-1}‖e^{εν^{1/3}t}f‖²)`.
    pub fn bound_ratio(&self) -> f64 {
        Self::ratio(self.lhs(), self.e_in + self.forcing_l2l2 / self.nu)
    }

    /// `|k|²‖e^{εν^{1/3}t}u‖²_{L²L²} / E_in`.
    pub fn inviscid_damping_ratio(&self) -> f64 {
        let k = self.k.unsigned_abs() as f64;
        Self::ratio(k * k * self.t_l2l2_u, self.e_in)
    }
}

/// Forcing applied during a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingSchedule {
    None,
    /// `f₁ = A e^{−t} sin(πy)`, `f₂ = 0`.
    DecayingSine { amplitude: f64 },
}

impl ForcingSchedule {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(ForcingSchedule::None),
            "decaying-sine" => Ok(ForcingSchedule::DecayingSine { amplitude: 1.0 }),
            other => Err(invalid(format!("unknown forcing schedule '{other}'"))),
        }
    }

    /// `(f₁, f₂)` at time `t`, or `None` when unforced.
    pub fn at(&self, grid: &ChebGrid, t: f64) -> Option<(Vec<C64>, Vec<C64>)> {
        match *self {
            ForcingSchedule::None => None,
            ForcingSchedule::DecayingSine { amplitude } => {
                let a = amplitude * (-t).exp();
                let f1 = grid
                    .nodes()
                    .iter()
                    .map(|&y| C64::new(a * (std::f64::consts::PI * y).sin(), 0.0))
                    .collect();
                Some((f1, vec![C64::new(0.0, 0.0); grid.n()]))
            }
        }
    }
}

/// Sparse trajectory record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub norm_om_l2: f64,
    pub norm_u_inf: f64,
    pub weighted_om: f64,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,norm_om_L2,norm_u_inf,weighted_om";

pub fn trajectory_csv(samples: &[TrajectorySample]) -> String {
    let mut s = String::from(TRAJECTORY_CSV_HEADER);
    s.push('\n');
    for p in samples {
        s.push_str(&format!("{:e},{:e},{:e},{:e}\n", p.t, p.norm_om_l2, p.norm_u_inf, p.weighted_om));
    }
    s
}

pub struct LinRun {
    pub trajectory: Vec<TrajectorySample>,
    pub ledger: SpaceTimeLedger,
    pub final_state: LinState,
}

fn forcing_sq(grid: &ChebGrid, f: &Option<(Vec<C64>, Vec<C64>)>) -> f64 {
    match f {
        Some((a, b)) => grid.l2(a).powi(2) + grid.l2(b).powi(2),
        None => 0.0,
    }
}

fn sample_of(state: &LinState, fsq: f64) -> LedgerSample {
    LedgerSample {
        t: state.time,
        u_sq: state.energy(),
        om_sq: state.norm_omega().powi(2),
        weighted_om: state.weighted_omega(),
        u_inf: state.u_inf(),
        forcing_sq: fsq,
    }
}

fn trajectory_of(state: &LinState) -> TrajectorySample {
    TrajectorySample {
        t: state.time,
        norm_om_l2: state.norm_omega(),
        norm_u_inf: state.u_inf(),
        weighted_om: state.weighted_omega(),
    }
}

/// Integrates `init` for `steps` steps, accumulating the ledger at every
/// step and keeping about `records` trajectory samples.
pub fn run(stepper: &LinearStepper, init: LinState, steps: usize, forcing: ForcingSchedule, records: usize) -> Result<LinRun> {
    let grid = stepper.grid().clone();
    let mut ledger = SpaceTimeLedger::new(init.params.nu, init.params.k, init.params.eps_rate, init.initial_energy());
    let stride = (steps / records.max(1)).max(1);
    let mut trajectory = vec![trajectory_of(&init)];
    let mut state = init;
    let mut f = forcing.at(&grid, state.time);
    ledger.push(sample_of(&state, forcing_sq(&grid, &f)));
    for i in 1..=steps {
        let pair = f.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
        state = stepper.step(&state, pair)?;
        f = forcing.at(&grid, state.time);
        ledger.push(sample_of(&state, forcing_sq(&grid, &f)));
        if i % stride == 0 || i == steps {
            trajectory.push(trajectory_of(&state));
        }
    }
    Ok(LinRun {
        trajectory,
        ledger,
        final_state: state,
    })
}

/// Steps needed to reach `horizon` with step `dt` (rounded up).
pub fn steps_for(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Unforced or forced run of one mode from a clamped initial stream function.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinConfig {
    pub preset: Preset,
    pub nu: f64,
    pub k: i64,
    pub eps_rate: f64,
    pub horizon: f64,
    pub forcing: ForcingSchedule,
    pub nodes: usize,
    /// Initial amplitude of `ψ = y²(1−y)²`; zero for a quiescent start.
    pub amplitude: f64,
    pub records: usize,
}

impl LinConfig {
    pub fn new(preset: Preset, nu: f64, k: i64, horizon: f64) -> Self {
        Self {
            preset,
            nu,
            k,
            eps_rate: 0.0,
            horizon,
            forcing: ForcingSchedule::None,
            nodes: 129,
            amplitude: 1.0,
            records: 100,
        }
    }
}

/// `y²(1−y)²`, clamped at both walls.
pub fn clamped_bump(y: f64) -> f64 {
    (y * (1.0 - y)).powi(2)
}

/// Runs `config` with a step of at most [`default_dt`] that divides the horizon.
pub fn run_config(config: &LinConfig) -> Result<LinRun> {
    if !(config.horizon > 0.0) || !config.horizon.is_finite() {
        return Err(invalid("horizon must be positive"));
    }
    let grid = crate::grid::build_grid(config.nodes)?;
    let profile = ShearProfile::from_preset(config.preset.clone(), grid.clone())?;
    let params = ProblemParams::new(config.nu, config.k, 0.0)?.with_eps_rate(config.eps_rate)?;
    let speed = profile.max_abs_u();
    let dt0 = default_dt(config.nu, config.k, speed);
    let steps = steps_for(config.horizon, dt0).max(1);
    let dt = config.horizon / steps as f64;
    let stepper = LinearStepper::new(grid.clone(), config.nu, config.k, dt, speed)?;
    let psi: Vec<C64> = grid
        .nodes()
        .iter()
        .map(|&y| C64::new(config.amplitude * clamped_bump(y), 0.0))
        .collect();
    let init = LinState::from_stream(params, &profile, grid, &psi)?;
    run(&stepper, init, steps, config.forcing, config.records)
}

/// Exponential decay fit of `‖ω(t)‖` on the tail window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub r2: f64,
    pub decaying: bool,
}

/// Least-squares fit of `log‖ω‖` against `t` on `[T/2, T]`.
pub fn decay_rate(samples: &[(f64, f64)]) -> Result<DecayFit> {
    let end = samples.iter().fold(f64::NEG_INFINITY, |m, s| m.max(s.0));
    let tail: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.0 >= 0.5 * end && s.1 > 0.0 && s.1.is_finite())
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    if tail.len() < 3 {
        return Err(Error::FitUnavailable("fewer than 3 samples in the tail window".into()));
    }
    let m = tail.len() as f64;
    let mt = tail.iter().map(|s| s.0).sum::<f64>() / m;
    let mv = tail.iter().map(|s| s.1).sum::<f64>() / m;
    let stt: f64 = tail.iter().map(|s| (s.0 - mt).powi(2)).sum();
    let stv: f64 = tail.iter().map(|s| (s.0 - mt) * (s.1 - mv)).sum();
    let svv: f64 = tail.iter().map(|s| (s.1 - mv).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::FitUnavailable("degenerate time window".into()));
    }
    let slope = stv / stt;
    let res: f64 = tail
        .iter()
        .map(|s| (s.1 - mv - slope * (s.0 - mt)).powi(2))
        .sum();
    let r2 = if svv > 0.0 { 1.0 - res / svv } else { 1.0 };
    Ok(DecayFit {
        rate: -slope,
        r2,
        decaying: slope < 0.0,
    })
}

/// `exp(−νk²((V′)² t³/3 + t))`.
pub fn damping_factor(nu: f64, k: f64, dv: f64, t: f64) -> f64 {
    (-nu * k * k * (dv * dv * t.powi(3) / 3.0 + t)).exp()
}

/// Width of the wall strips excluded from [`SplitDiagnostic::interior`].
pub const WALL_STRIP: f64 = 0.1;

/// `‖ω(t) − ω_{H,1}(t)‖ / ‖ω_in‖` at sampled times, over the whole channel
/// and over `[WALL_STRIP, 1 − WALL_STRIP]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDiagnostic {
    pub times: Vec<f64>,
    pub discrepancy: Vec<f64>,
    pub interior: Vec<f64>,
}

/// Compares the viscous no-slip mode against the damped inviscid solution.
///
/// The inviscid problem `∂_tω + ikVω − ikV″ψ = 0` with Dirichlet `ψ` is
/// integrated by classical RK4 on the stepper's grid and step, with `V`
/// frozen at the initial profile; the result is multiplied pointwise by
/// [`damping_factor`] with `V′(y)`.
pub fn homogeneous_split_diag(stepper: &LinearStepper, init: &LinState, steps: usize, records: usize) -> Result<SplitDiagnostic> {
    let grid = stepper.grid().clone();
    let viscous0 = init.clone().frozen();
    let (v, v2) = (viscous0.u.clone(), viscous0.d2u.clone());
    let dv = grid.diff_real(&v);
    let k = init.params.k as f64;
    let nu = init.params.nu;
    let dt = stepper.dt();
    let helm = DirichletHelmholtz::new(grid.clone(), k);
    let rhs = |w: &[C64]| -> Vec<C64> {
        let psi = helm.solve(w);
        w.iter()
            .zip(&psi)
            .zip(v.iter().zip(&v2))
            .map(|((w, p), (a, b))| I * k * (p * *b - w * *a))
            .collect()
    };
    let norm0 = grid.l2(&init.omega);
    let stride = (steps / records.max(1)).max(1);
    let mut times = vec![0.0];
    let mut discrepancy = vec![0.0];
    let mut interior = vec![0.0];
    let mut viscous = viscous0;
    let mut inviscid = init.omega.clone();
    let axpy = |x: &[C64], a: f64, y: &[C64]| -> Vec<C64> { x.iter().zip(y).map(|(p, q)| p + q * a).collect() };
    for i in 1..=steps {
        viscous = stepper.step(&viscous, None)?;
        let k1 = rhs(&inviscid);
        let k2 = rhs(&axpy(&inviscid, 0.5 * dt, &k1));
        let k3 = rhs(&axpy(&inviscid, 0.5 * dt, &k2));
        let k4 = rhs(&axpy(&inviscid, dt, &k3));
        for j in 0..inviscid.len() {
            inviscid[j] += (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (dt / 6.0);
        }
        if i % stride == 0 || i == steps {
            let t = viscous.time;
            let diff: Vec<C64> = viscous
                .omega
                .iter()
                .zip(&inviscid)
                .zip(&dv)
                .map(|((a, b), &s)| a - b * damping_factor(nu, k, s, t))
                .collect();
            let inner: Vec<C64> = grid
                .nodes()
                .iter()
                .zip(&diff)
                .map(|(&y, d)| if y > WALL_STRIP && y < 1.0 - WALL_STRIP { *d } else { C64::new(0.0, 0.0) })
                .collect();
            times.push(t);
            let scale = if norm0 > 0.0 { 1.0 / norm0 } else { 0.0 };
            discrepancy.push(grid.l2(&diff) * scale);
            interior.push(grid.l2(&inner) * scale);
        }
    }
    Ok(SplitDiagnostic { times, discrepancy, interior })
}

/// Crank–Nicolson step of `(∂_t − ν∂²_y)u = f` with `u = 0` at the walls.
pub struct ZeroModeStepper {
    grid: Arc<ChebGrid>,
    nu: f64,
    dt: f64,
    implicit: DirichletHelmholtz,
}

impl ZeroModeStepper {
    pub fn new(grid: Arc<ChebGrid>, nu: f64, dt: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(invalid("nu must be positive"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("time step must be positive"));
        }
        let implicit = DirichletHelmholtz::with_shift(grid.clone(), -0.5 * dt * nu, 1.0, 0.0);
        Ok(Self { grid, nu, dt, implicit })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `u` by one step; `forcing` is the time-centred value.
    pub fn step(&self, u: &[f64], forcing: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n();
        if u.len() != n || forcing.len() != n {
            return Err(invalid("field lives on a different grid"));
        }
        let scale = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if u[0].abs() > 1e-10 * scale || u[n - 1].abs() > 1e-10 * scale {
            return Err(invalid("zero mode must vanish at the walls"));
        }
        let lap = crate::linalg::matvec(self.grid.d2(), u);
        let rhs: Vec<f64> = u
            .iter()
            .zip(&lap)
            .zip(forcing)
            .map(|((a, l), f)| a + 0.5 * self.dt * self.nu * l + self.dt * f)
            .collect();
        Ok(self.implicit.solve_real(&rhs))
    }
}

/// One Crank–Nicolson heat step with explicit forcing.
pub fn zero_mode_step(grid: &Arc<ChebGrid>, nu: f64, u10: &[f64], dt: f64, forcing: &[f64]) -> Result<Vec<f64>> {
    ZeroModeStepper::new(grid.clone(), nu, dt)?.step(u10, forcing)
}

/// Outcome of the rate calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCalibration {
    pub eps0: f64,
    pub base_ratio: f64,
    /// `(ε, R(ε))` for every candidate.
    pub ratios: Vec<(f64, f64)>,
}

/// Candidate rates: eight log-spaced values on `[0.01, 0.2]`.
pub fn rate_candidates() -> Vec<f64> {
    (0..8).map(|i| 0.01 * 20f64.powf(i as f64 / 7.0)).collect()
}

/// Horizon of the calibration run in units of `ν^{-1/3}`.
pub const CALIBRATION_HORIZON: f64 = 20.0;

/// Largest candidate rate whose unforced Couette ratio at `ν = 1e-4`,
/// `k = 1` stays below ten times the unweighted one.
pub fn calibrate_eps0() -> Result<RateCalibration> {
    let nu = 1e-4;
    let cfg = LinConfig::new(Preset::Couette, nu, 1, CALIBRATION_HORIZON * nu.powf(-1.0 / 3.0));
    let run = run_config(&cfg)?;
    let base = run.ledger.reweighted(0.0).unforced_ratio();
    let ratios: Vec<(f64, f64)> = rate_candidates()
        .into_iter()
        .map(|e| (e, run.ledger.reweighted(e).unforced_ratio()))
        .collect();
    let eps0 = ratios
        .iter()
        .filter(|r| r.1 < 10.0 * base)
        .map(|r| r.0)
        .fold(0.0, f64::max);
    if eps0 == 0.0 {
        return Err(invalid("no candidate rate keeps the ratio bounded"));
    }
    Ok(RateCalibration {
        eps0,
        base_ratio: base,
        ratios,
    })
}

/// Samples `(t, ‖ω‖)` from a ledger.
pub fn omega_history(ledger: &SpaceTimeLedger) -> Vec<(f64, f64)> {
    ledger.samples.iter().map(|s| (s.t, s.om_sq.sqrt())).collect()
}
