//! Pseudospectral simulation of the full perturbation system
//!
//! `∂_tω − νΔω + u·∇ω + U∂_xω − ∂²_yU ∂_xψ = 0`, `Δψ = ω`,
//! `u = (∂_yψ, −∂_xψ)`, `ψ = ∂_yψ = 0` at both walls,
//!
//! with Fourier modes `f(x, y) = Σ_k f_k(y) e^{ikx}` on `x ∈ [0, 2π)` and
//! Chebyshev collocation in `y`. Only `k ≥ 0` is stored; `f_{−k}` is the
//! conjugate of `f_k`. The quadratic term enters each mode as
//! `−∂_y g₁ − ik g₂` with `g₁ = (u·∇u₁)_k` and `g₂ = −(u·∇u₂)_k`, products
//! taken on a 2/3-dealiased physical grid. The mean flow perturbation `u₁,₀`
//! obeys `(∂_t − ν∂²_y)u₁,₀ = −(u·∇u₁)₀` with Dirichlet walls.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{build_grid, ChebGrid, DirichletHelmholtz};
use crate::linalg::{C64, I};
use crate::linear::{weighted_norm, LedgerSample, LinearStepper, SpaceTimeLedger, ZeroModeStepper};
use crate::profile::{NodeEvolver, Preset, ShearProfile};
use crate::scan::fit_exponent;

pub const DEFAULT_K_MAX: usize = 21;
pub const DEFAULT_NODES: usize = 129;
/// Advective Courant number `k_max · max|U| · dt` of the default step.
pub const COURANT: f64 = 0.25;
/// Rate constant `ε₀` from [`crate::linear::calibrate_eps0`].
pub const DEFAULT_EPS0: f64 = 0.2;
/// Energy fraction above `2k_max/3` beyond which a run counts as unresolved.
pub const TAIL_LIMIT: f64 = 1e-3;
/// Growth of the ledger total allowed by the stability predicate.
pub const GROWTH_LIMIT: f64 = 10.0;

const MAGIC: &[u8; 8] = b"SHSTCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Physical points in `x` for modes `|k| ≤ k_max`: the smallest power of
/// two above `3 k_max`, so quadratic products do not alias.
pub fn physical_points(k_max: usize) -> usize {
    (3 * k_max + 1).next_power_of_two()
}

fn zeros(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

fn finite(v: &[C64]) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Fields of one Fourier mode. For `k = 0` only `u1` (real) and
/// `omega = ∂_y u1` are tracked; `psi` and `u2` are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeField {
    pub omega: Vec<C64>,
    pub psi: Vec<C64>,
    pub u1: Vec<C64>,
    pub u2: Vec<C64>,
}

impl ModeField {
    fn zero(n: usize) -> Self {
        Self {
            omega: zeros(n),
            psi: zeros(n),
            u1: zeros(n),
            u2: zeros(n),
        }
    }

    fn from_stream(grid: &ChebGrid, k: usize, psi: Vec<C64>) -> Self {
        let kf = k as f64;
        let u1 = grid.diff(&psi);
        let lap = grid.diff2(&psi);
        let omega = lap.iter().zip(&psi).map(|(a, p)| a - p * (kf * kf)).collect();
        let u2 = psi.iter().map(|p| -I * kf * p).collect();
        Self { omega, psi, u1, u2 }
    }

    fn from_vorticity(grid: &ChebGrid, k: usize, omega: Vec<C64>, psi: Vec<C64>) -> Self {
        let u1 = grid.diff(&psi);
        let u2 = psi.iter().map(|p| -I * k as f64 * p).collect();
        Self { omega, psi, u1, u2 }
    }

    fn mean_flow(grid: &ChebGrid, u1: Vec<f64>) -> Self {
        let n = u1.len();
        let omega = grid.diff_real(&u1).into_iter().map(|v| C64::new(v, 0.0)).collect();
        Self {
            omega,
            psi: zeros(n),
            u1: u1.into_iter().map(|v| C64::new(v, 0.0)).collect(),
            u2: zeros(n),
        }
    }

    /// `‖u₁‖² + ‖u₂‖²`.
    pub fn energy(&self, grid: &ChebGrid) -> f64 {
        grid.l2(&self.u1).powi(2) + grid.l2(&self.u2).powi(2)
    }

    pub fn u_inf(&self) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .fold(0.0f64, |m, (a, b)| m.max((a.norm_sqr() + b.norm_sqr()).sqrt()))
    }
}

struct History {
    tendency: Vec<Vec<C64>>,
    zero: Vec<f64>,
}

/// Perturbation modes `0..=k_max` with the background flow.
pub struct SpectralState {
    pub nu: f64,
    pub eps_rate: f64,
    pub k_max: usize,
    pub grid: Arc<ChebGrid>,
    pub evolver: Arc<NodeEvolver>,
    pub time: f64,
    pub modes: Vec<ModeField>,
    u: Vec<f64>,
    d2u: Vec<f64>,
    prev: Option<History>,
}

impl Clone for SpectralState {
    fn clone(&self) -> Self {
        Self {
            nu: self.nu,
            eps_rate: self.eps_rate,
            k_max: self.k_max,
            grid: self.grid.clone(),
            evolver: self.evolver.clone(),
            time: self.time,
            modes: self.modes.clone(),
            u: self.u.clone(),
            d2u: self.d2u.clone(),
            prev: self.prev.as_ref().map(|h| History {
                tendency: h.tendency.clone(),
                zero: h.zero.clone(),
            }),
        }
    }
}

/// How the initial modes are shaped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModePattern {
    /// `ψ_k = y²(1−y)²` in one mode.
    Single { k: usize },
    /// `ψ_k = y²(1−y)² Σ_j c_j P_j(2y − 1)`, `j ≤ 3`, with seeded random
    /// coefficients in every listed mode.
    Random { modes: Vec<usize> },
    /// Stream functions given on the grid nodes; mode 0 uses the real part.
    Custom { streams: Vec<(usize, Vec<C64>)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub pattern: ModePattern,
    pub seed: u64,
}

impl InitSpec {
    pub fn single(k: usize) -> Self {
        Self {
            pattern: ModePattern::Single { k },
            seed: 0,
        }
    }

    pub fn random(modes: Vec<usize>, seed: u64) -> Self {
        Self {
            pattern: ModePattern::Random { modes },
            seed,
        }
    }
}

fn legendre(j: usize, x: f64) -> f64 {
    match j {
        0 => 1.0,
        1 => x,
        2 => 0.5 * (3.0 * x * x - 1.0),
        _ => 0.5 * (5.0 * x * x * x - 3.0 * x),
    }
}

fn envelope(y: f64) -> f64 {
    (y * (1.0 - y)).powi(2)
}

impl SpectralState {
    /// Zero perturbation at `t = 0`.
    pub fn zero(profile: &ShearProfile, grid: Arc<ChebGrid>, nu: f64, eps_rate: f64, k_max: usize) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(invalid("nu must be positive"));
        }
        if !(eps_rate >= 0.0) || !eps_rate.is_finite() {
            return Err(invalid("eps_rate must be non-negative"));
        }
        if k_max < 1 {
            return Err(invalid("k_max must be at least 1"));
        }
        let evolver = Arc::new(NodeEvolver::new(profile.series().clone(), grid.nodes(), nu)?);
        let (u, d2u) = evolver.at(0.0);
        let n = grid.n();
        Ok(Self {
            nu,
            eps_rate,
            k_max,
            modes: (0..=k_max).map(|_| ModeField::zero(n)).collect(),
            grid,
            evolver,
            time: 0.0,
            u,
            d2u,
            prev: None,
        })
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// `U` and `∂²_y U` at the state time.
    pub fn background(&self) -> (&[f64], &[f64]) {
        (&self.u, &self.d2u)
    }

    /// `‖u‖²_{L²}` over the periodic channel, `2π Σ_{k∈ℤ} ‖u_k‖²`.
    pub fn energy(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.mode_energy_sum(0)
    }

    fn mode_energy_sum(&self, from: usize) -> f64 {
        self.modes
            .iter()
            .enumerate()
            .skip(from)
            .map(|(k, m)| if k == 0 { 1.0 } else { 2.0 } * m.energy(&self.grid))
            .sum()
    }

    /// `‖ω‖_{L²}` over the periodic channel.
    pub fn norm_omega(&self) -> f64 {
        let s: f64 = self
            .modes
            .iter()
            .enumerate()
            .map(|(k, m)| if k == 0 { 1.0 } else { 2.0 } * self.grid.l2(&m.omega).powi(2))
            .sum();
        (2.0 * std::f64::consts::PI * s).sqrt()
    }

    /// Share of the energy in modes `k > 2k_max/3`.
    pub fn tail_fraction(&self) -> f64 {
        let total = self.mode_energy_sum(0);
        if total == 0.0 {
            return 0.0;
        }
        self.mode_energy_sum(2 * self.k_max / 3 + 1) / total
    }

    /// `‖u‖_{H²}` over the periodic channel: all `∂_x^a ∂_y^b`, `a + b ≤ 2`.
    pub fn h2_norm(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for (k, m) in self.modes.iter().enumerate() {
            let k2 = (k as f64).powi(2);
            let mut e = 0.0;
            for f in [&m.u1, &m.u2] {
                let d1 = g.diff(f);
                let d2 = g.diff(&d1);
                let (n0, n1, n2) = (g.l2(f).powi(2), g.l2(&d1).powi(2), g.l2(&d2).powi(2));
                e += n0 + n1 + n2 + k2 * (n0 + n1) + k2 * k2 * n0;
            }
            s += if k == 0 { 1.0 } else { 2.0 } * e;
        }
        (2.0 * std::f64::consts::PI * s).sqrt()
    }

    /// Largest `|∂_yψ_k|` at the walls over all modes `k ≥ 1`.
    pub fn wall_slip(&self) -> f64 {
        let l = self.grid.last();
        self.modes
            .iter()
            .skip(1)
            .fold(0.0f64, |m, f| m.max(f.u1[0].norm()).max(f.u1[l].norm()))
    }

    /// Zero-mode fields are real and vanish at the walls.
    pub fn is_real(&self) -> bool {
        let m = &self.modes[0];
        m.u1.iter().chain(&m.omega).all(|z| z.im == 0.0)
    }

    /// Largest modal velocity value, the scale of the no-slip residual.
    pub fn velocity_scale(&self) -> f64 {
        self.modes
            .iter()
            .flat_map(|m| m.u1.iter().chain(&m.u2))
            .fold(0.0f64, |a, z| a.max(z.norm()))
    }

    fn rescaled(mut self, factor: f64) -> Self {
        for m in &mut self.modes {
            for v in [&mut m.omega, &mut m.psi, &mut m.u1, &mut m.u2] {
                for z in v.iter_mut() {
                    *z *= factor;
                }
            }
        }
        self
    }
}

/// Initial perturbation with `‖u_in‖_{H²} = amplitude`.
pub fn init_perturbation(
    profile: &ShearProfile,
    grid: Arc<ChebGrid>,
    nu: f64,
    eps_rate: f64,
    k_max: usize,
    spec: &InitSpec,
    amplitude: f64,
) -> Result<SpectralState> {
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(invalid("amplitude must be non-negative"));
    }
    let mut state = SpectralState::zero(profile, grid.clone(), nu, eps_rate, k_max)?;
    let limit = k_max / 3;
    let check_k = |k: usize| -> Result<()> {
        if k > limit {
            Err(invalid(format!("mode {k} exceeds the dealiasing headroom k_max/3 = {limit}")))
        } else {
            Ok(())
        }
    };
    let nodes = grid.nodes();
    let mut streams: Vec<(usize, Vec<C64>)> = Vec::new();
    match &spec.pattern {
        ModePattern::Single { k } => {
            check_k(*k)?;
            streams.push((*k, nodes.iter().map(|&y| C64::new(envelope(y), 0.0)).collect()));
        }
        ModePattern::Random { modes } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut seen = Vec::new();
            for &k in modes {
                check_k(k)?;
                if seen.contains(&k) {
                    return Err(invalid(format!("mode {k} listed twice")));
                }
                seen.push(k);
                let c: Vec<C64> = (0..4)
                    .map(|_| {
                        let re = rng.gen_range(-1.0..1.0);
                        let im = if k == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
                        C64::new(re, im)
                    })
                    .collect();
                let psi = nodes
                    .iter()
                    .map(|&y| {
                        let x = 2.0 * y - 1.0;
                        c.iter().enumerate().map(|(j, a)| a * legendre(j, x)).sum::<C64>() * envelope(y)
                    })
                    .collect();
                streams.push((k, psi));
            }
        }
        ModePattern::Custom { streams: given } => {
            let l = grid.last();
            for (k, psi) in given {
                check_k(*k)?;
                if psi.len() != grid.n() {
                    return Err(invalid("stream function lives on a different grid"));
                }
                if !finite(psi) {
                    return Err(invalid("stream function is not finite"));
                }
                let scale = psi.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
                let d = grid.diff(psi);
                let dscale = d.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
                if psi[0].norm() > 1e-10 * scale || psi[l].norm() > 1e-10 * scale {
                    return Err(invalid(format!("mode {k} violates psi = 0 at the walls")));
                }
                if d[0].norm() > 1e-8 * dscale || d[l].norm() > 1e-8 * dscale {
                    return Err(invalid(format!("mode {k} violates d psi/dy = 0 at the walls")));
                }
                streams.push((*k, psi.clone()));
            }
        }
    }
    for (k, psi) in streams {
        state.modes[k] = if k == 0 {
            let re: Vec<f64> = psi.iter().map(|z| z.re).collect();
            ModeField::mean_flow(&grid, grid.diff_real(&re))
        } else {
            ModeField::from_stream(&grid, k, psi)
        };
    }
    if amplitude == 0.0 {
        return Ok(state.rescaled(0.0));
    }
    let h2 = state.h2_norm();
    if !(h2 > 0.0) {
        return Err(invalid("initial pattern is identically zero"));
    }
    Ok(state.rescaled(amplitude / h2))
}

struct Spectra {
    nx: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectra {
    fn new(k_max: usize) -> Self {
        let nx = physical_points(k_max);
        let mut planner = FftPlanner::new();
        Self {
            nx,
            fwd: planner.plan_fft_forward(nx),
            inv: planner.plan_fft_inverse(nx),
        }
    }

    /// Real physical values from coefficients `c_0..c_K` (conjugates implied).
    fn to_physical(&self, coeffs: &[C64], buf: &mut Vec<C64>, scratch: &mut Vec<C64>) {
        buf.clear();
        buf.resize(self.nx, C64::new(0.0, 0.0));
        buf[0] = C64::new(coeffs[0].re, 0.0);
        for (k, c) in coeffs.iter().enumerate().skip(1) {
            buf[k] = *c;
            buf[self.nx - k] = c.conj();
        }
        scratch.resize(self.inv.get_inplace_scratch_len(), C64::new(0.0, 0.0));
        self.inv.process_with_scratch(buf, scratch);
    }

    /// Coefficients `0..=k_max` of real physical values in `buf`.
    fn to_modes(&self, buf: &mut [C64], k_max: usize, scratch: &mut Vec<C64>) -> Vec<C64> {
        scratch.resize(self.fwd.get_inplace_scratch_len(), C64::new(0.0, 0.0));
        self.fwd.process_with_scratch(buf, scratch);
        let inv_n = 1.0 / self.nx as f64;
        buf[..=k_max].iter().map(|z| z * inv_n).collect()
    }
}

/// Quadratic terms of one state, per mode `0..=k_max`.
pub struct NonlinearTerms {
    /// `(u·∇u₁)_k`
    pub g1: Vec<Vec<C64>>,
    /// `−(u·∇u₂)_k`
    pub g2: Vec<Vec<C64>>,
    /// `max |u₁|` over the physical grid.
    pub max_u1: f64,
    /// `max_j |u₂(y_j)| / Δy_j` over the physical grid.
    pub max_u2_rate: f64,
}

impl NonlinearTerms {
    /// Vorticity forcing `−∂_y g₁ − ik g₂` of mode `k`.
    pub fn vorticity(&self, grid: &ChebGrid, k: usize) -> Vec<C64> {
        let d = grid.diff(&self.g1[k]);
        d.iter().zip(&self.g2[k]).map(|(a, b)| -a - I * k as f64 * b).collect()
    }
}

fn local_spacing(grid: &ChebGrid) -> Vec<f64> {
    let y = grid.nodes();
    let l = grid.last();
    (0..=l)
        .map(|j| {
            let a = if j == 0 { y[0] } else { y[j - 1] };
            let b = if j == l { y[l] } else { y[j + 1] };
            if j == 0 || j == l {
                b - a
            } else {
                0.5 * (b - a)
            }
        })
        .collect()
}

fn compute_terms(state: &SpectralState, spectra: &Spectra, spacing: &[f64]) -> NonlinearTerms {
    let g = &state.grid;
    let n = g.n();
    let kk = state.k_max;
    let dy1: Vec<Vec<C64>> = state.modes.iter().map(|m| g.diff(&m.u1)).collect();
    let dy2: Vec<Vec<C64>> = state.modes.iter().map(|m| g.diff(&m.u2)).collect();
    let mut g1 = vec![zeros(n); kk + 1];
    let mut g2 = vec![zeros(n); kk + 1];
    let (mut buf, mut scratch) = (Vec::new(), Vec::new());
    let mut coeffs = zeros(kk + 1);
    let mut max_u1 = 0.0f64;
    let mut max_u2_rate = 0.0f64;
    let mut phys = |select: &dyn Fn(usize) -> C64, buf: &mut Vec<C64>, scratch: &mut Vec<C64>| -> Vec<f64> {
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = select(k);
        }
        spectra.to_physical(&coeffs, buf, scratch);
        buf.iter().map(|z| z.re).collect()
    };
    for j in 0..n {
        let u1 = phys(&|k| state.modes[k].u1[j], &mut buf, &mut scratch);
        let u2 = phys(&|k| state.modes[k].u2[j], &mut buf, &mut scratch);
        let dx1 = phys(&|k| I * k as f64 * state.modes[k].u1[j], &mut buf, &mut scratch);
        let dx2 = phys(&|k| I * k as f64 * state.modes[k].u2[j], &mut buf, &mut scratch);
        let d1 = phys(&|k| dy1[k][j], &mut buf, &mut scratch);
        let d2 = phys(&|k| dy2[k][j], &mut buf, &mut scratch);
        for m in 0..spectra.nx {
            max_u1 = max_u1.max(u1[m].abs());
            max_u2_rate = max_u2_rate.max(u2[m].abs() / spacing[j]);
        }
        buf.clear();
        buf.extend((0..spectra.nx).map(|m| C64::new(u1[m] * dx1[m] + u2[m] * d1[m], 0.0)));
        let a = spectra.to_modes(&mut buf, kk, &mut scratch);
        buf.clear();
        buf.extend((0..spectra.nx).map(|m| C64::new(u1[m] * dx2[m] + u2[m] * d2[m], 0.0)));
        let b = spectra.to_modes(&mut buf, kk, &mut scratch);
        for k in 0..=kk {
            g1[k][j] = a[k];
            g2[k][j] = -b[k];
        }
    }
    NonlinearTerms {
        g1,
        g2,
        max_u1,
        max_u2_rate,
    }
}

/// Quadratic forcing of every mode; the vorticity right-hand side of mode
/// `k` is [`NonlinearTerms::vorticity`].
pub fn nonlinear_terms(state: &SpectralState) -> NonlinearTerms {
    let spectra = Spectra::new(state.k_max);
    compute_terms(state, &spectra, &local_spacing(&state.grid))
}

/// Default step: ten steps per `ν^{-1/3}` and Courant number [`COURANT`]
/// at `k_max`.
pub fn nonlinear_dt(nu: f64, k_max: usize, max_speed: f64) -> f64 {
    let layer = 0.1 * nu.powf(-1.0 / 3.0);
    let kf = k_max as f64 * max_speed;
    if kf > 0.0 {
        layer.min(COURANT / kf)
    } else {
        layer
    }
}

/// Factorizations for every mode at one `(ν, dt)`.
pub struct NonlinearStepper {
    grid: Arc<ChebGrid>,
    nu: f64,
    dt: f64,
    k_max: usize,
    max_speed: f64,
    modes: Vec<LinearStepper>,
    zero: ZeroModeStepper,
    spectra: Spectra,
    spacing: Vec<f64>,
}

impl NonlinearStepper {
    /// `max_speed` bounds `|U|`.
    pub fn new(grid: Arc<ChebGrid>, nu: f64, k_max: usize, dt: f64, max_speed: f64) -> Result<Self> {
        if k_max < 1 {
            return Err(invalid("k_max must be at least 1"));
        }
        let modes = (1..=k_max)
            .map(|k| LinearStepper::new(grid.clone(), nu, k as i64, dt, max_speed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            zero: ZeroModeStepper::new(grid.clone(), nu, dt)?,
            spectra: Spectra::new(k_max),
            spacing: local_spacing(&grid),
            grid,
            nu,
            dt,
            k_max,
            max_speed,
            modes,
        })
    }

    /// Stepper with [`nonlinear_dt`] for `profile`.
    pub fn for_profile(grid: Arc<ChebGrid>, nu: f64, k_max: usize, profile: &ShearProfile) -> Result<Self> {
        let speed = profile.max_abs_u();
        Self::new(grid, nu, k_max, nonlinear_dt(nu, k_max, speed), speed)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    /// Quadratic terms with this stepper's transforms.
    pub fn terms(&self, state: &SpectralState) -> NonlinearTerms {
        compute_terms(state, &self.spectra, &self.spacing)
    }

    /// One CN/AB2 step of every mode. Loss of the advective step restriction
    /// by the perturbation velocity is reported as blow-up.
    pub fn step(&self, state: &SpectralState) -> Result<SpectralState> {
        if state.k_max != self.k_max || state.grid.n() != self.grid.n() {
            return Err(invalid("state and stepper use different resolutions"));
        }
        if (state.nu - self.nu).abs() > 1e-15 * self.nu {
            return Err(invalid("state and stepper use different nu"));
        }
        let terms = self.terms(state);
        let time = state.time + self.dt;
        let courant = self.dt * ((self.max_speed + terms.max_u1) * self.k_max as f64 + terms.max_u2_rate);
        if !courant.is_finite() || courant > 1.0 {
            return Err(Error::BlowUp { time, k: None });
        }
        let grid = &self.grid;
        let mut modes = Vec::with_capacity(self.k_max + 1);
        let mut tendency = Vec::with_capacity(self.k_max);
        let zero_force: Vec<f64> = terms.g1[0].iter().map(|z| -z.re).collect();
        let centred: Vec<f64> = match &state.prev {
            Some(h) => zero_force.iter().zip(&h.zero).map(|(a, b)| 1.5 * a - 0.5 * b).collect(),
            None => zero_force.clone(),
        };
        let u10: Vec<f64> = state.modes[0].u1.iter().map(|z| z.re).collect();
        let u10 = self.zero.step(&u10, &centred)?;
        if !u10.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { time, k: Some(0) });
        }
        modes.push(ModeField::mean_flow(grid, u10));
        for k in 1..=self.k_max {
            let st = &self.modes[k - 1];
            let m = &state.modes[k];
            let f = terms.vorticity(grid, k);
            let now = st.tendency(&m.omega, &m.psi, &state.u, &state.d2u, Some(&f));
            let prev = state.prev.as_ref().map(|h| h.tendency[k - 1].as_slice());
            let (omega, psi) = st.advance(&m.omega, &now, prev);
            if !finite(&omega) {
                return Err(Error::BlowUp { time, k: Some(k as i64) });
            }
            modes.push(ModeField::from_vorticity(grid, k, omega, psi));
            tendency.push(now);
        }
        let (u, d2u) = state.evolver.at(time);
        Ok(SpectralState {
            nu: state.nu,
            eps_rate: state.eps_rate,
            k_max: state.k_max,
            grid: state.grid.clone(),
            evolver: state.evolver.clone(),
            time,
            modes,
            u,
            d2u,
            prev: Some(History {
                tendency,
                zero: zero_force,
            }),
        })
    }
}

/// Running stability norms of every mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub nu: f64,
    pub eps_rate: f64,
    /// Ledgers of modes `1..=k_max`.
    pub modes: Vec<SpaceTimeLedger>,
    /// `max_t ‖ω₀‖`
    pub zero_sup: f64,
}

impl EnergyLedger {
    pub fn new(nu: f64, eps_rate: f64, k_max: usize) -> Self {
        Self {
            nu,
            eps_rate,
            modes: (1..=k_max).map(|k| SpaceTimeLedger::new(nu, k as i64, eps_rate, 0.0)).collect(),
            zero_sup: 0.0,
        }
    }

    pub fn push(&mut self, state: &SpectralState) {
        let g = &state.grid;
        for (l, m) in self.modes.iter_mut().zip(state.modes.iter().skip(1)) {
            l.push(LedgerSample {
                t: state.time,
                u_sq: m.energy(g),
                om_sq: g.l2(&m.omega).powi(2),
                weighted_om: weighted_norm(g, &m.omega),
                u_inf: m.u_inf(),
                forcing_sq: 0.0,
            });
        }
        self.zero_sup = self.zero_sup.max(g.l2(&state.modes[0].omega));
    }

    /// Ledger rebuilt from a sequence of states.
    pub fn from_states<'a>(states: impl IntoIterator<Item = &'a SpectralState>) -> Result<Self> {
        let mut it = states.into_iter().peekable();
        let first = it.peek().ok_or_else(|| invalid("no states"))?;
        let mut l = Self::new(first.nu, first.eps_rate, first.k_max);
        for s in it {
            l.push(s);
        }
        Ok(l)
    }

    /// `E_k` for `k ≥ 1`:
    /// `|k|‖e u_k‖_{L²L²} + ‖e u_k‖_{L∞L∞} + ‖e √w ω_k‖_{L∞L²} + ν^{1/4}|k|^{1/2}‖e ω_k‖_{L²L²}`,
    /// `e = e^{ε ν^{1/3} t}`; `E_0 = ‖ω₀‖_{L∞L²}`.
    pub fn mode(&self, k: usize) -> f64 {
        if k == 0 {
            return self.zero_sup;
        }
        let l = &self.modes[k - 1];
        let kf = k as f64;
        kf * l.t_l2l2_u.sqrt() + l.sup_uinf + l.sup_weighted_om + self.nu.powf(0.25) * kf.sqrt() * l.t_l2l2_om.sqrt()
    }

    /// `Σ_{k∈ℤ} E_k = E_0 + 2 Σ_{k≥1} E_k`.
    pub fn total(&self) -> f64 {
        self.mode(0) + 2.0 * (1..=self.modes.len()).map(|k| self.mode(k)).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlSample {
    pub t: f64,
    pub energy: f64,
    pub norm_omega: f64,
    pub ledger_total: f64,
    pub tail_fraction: f64,
}

pub const NL_CSV_HEADER: &str = "t,energy,norm_omega,ledger_total,tail_fraction";

pub fn nl_trajectory_csv(samples: &[NlSample]) -> String {
    let mut s = String::from(NL_CSV_HEADER);
    s.push('\n');
    for p in samples {
        s.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e}\n",
            p.t, p.energy, p.norm_omega, p.ledger_total, p.tail_fraction
        ));
    }
    s
}

/// Outcome of a nonlinear run.
pub struct NlRun {
    pub trajectory: Vec<NlSample>,
    pub ledger: EnergyLedger,
    pub final_state: SpectralState,
    /// Ledger total after the first step; the reference of the predicate.
    pub initial_total: f64,
    /// `max_t Σ E_k(t) / Σ E_k(0)`.
    pub max_growth: f64,
    pub max_tail: f64,
    /// `(time, mode)` of a blow-up that ended the run early.
    pub blow_up: Option<(f64, Option<i64>)>,
}

impl NlRun {
    pub fn unresolved(&self) -> bool {
        self.max_tail > TAIL_LIMIT
    }

    /// `Σ E_k(t) ≤ 10 Σ E_k(0)` throughout and `‖ω(T)‖ < ‖ω(0)‖`.
    pub fn stable(&self) -> bool {
        let first = self.trajectory.first().map(|s| s.norm_omega).unwrap_or(0.0);
        let last = self.final_state.norm_omega();
        self.blow_up.is_none() && self.max_growth <= GROWTH_LIMIT && (last < first || first == 0.0)
    }
}

fn sample(state: &SpectralState, ledger: &EnergyLedger) -> NlSample {
    NlSample {
        t: state.time,
        energy: state.energy(),
        norm_omega: state.norm_omega(),
        ledger_total: ledger.total(),
        tail_fraction: state.tail_fraction(),
    }
}

/// Integrates `init` for `steps` steps, calling `observe` after every step.
/// A blow-up ends the run and is recorded rather than returned as an error.
pub fn run_nonlinear_with(
    stepper: &NonlinearStepper,
    init: SpectralState,
    steps: usize,
    records: usize,
    mut observe: impl FnMut(usize, &SpectralState) -> Result<()>,
) -> Result<NlRun> {
    let mut ledger = EnergyLedger::new(init.nu, init.eps_rate, init.k_max);
    ledger.push(&init);
    let initial_total = ledger.total();
    let stride = (steps / records.max(1)).max(1);
    let mut trajectory = vec![sample(&init, &ledger)];
    let mut max_tail = init.tail_fraction();
    let mut max_growth: f64 = if initial_total > 0.0 { 1.0 } else { 0.0 };
    let mut blow_up = None;
    observe(0, &init)?;
    let mut state = init;
    for i in 1..=steps {
        match stepper.step(&state) {
            Ok(next) => state = next,
            Err(Error::BlowUp { time, k }) => {
                blow_up = Some((time, k));
                break;
            }
            Err(e) => return Err(e),
        }
        ledger.push(&state);
        if initial_total > 0.0 {
            max_growth = max_growth.max(ledger.total() / initial_total);
        }
        max_tail = max_tail.max(state.tail_fraction());
        observe(i, &state)?;
        if i % stride == 0 || i == steps {
            trajectory.push(sample(&state, &ledger));
        }
    }
    Ok(NlRun {
        trajectory,
        ledger,
        final_state: state,
        initial_total,
        max_growth,
        max_tail,
        blow_up,
    })
}

pub fn run_nonlinear(stepper: &NonlinearStepper, init: SpectralState, steps: usize, records: usize) -> Result<NlRun> {
    run_nonlinear_with(stepper, init, steps, records, |_, _| Ok(()))
}

/// Saved perturbation: `ω_k` for `k ≥ 1` and `u₁,₀` for `k = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub k_max: usize,
    pub n: usize,
    pub nu: f64,
    pub t: f64,
    pub fields: Vec<Vec<C64>>,
}

impl Checkpoint {
    pub fn of(state: &SpectralState) -> Self {
        let fields = state
            .modes
            .iter()
            .enumerate()
            .map(|(k, m)| if k == 0 { m.u1.clone() } else { m.omega.clone() })
            .collect();
        Self {
            k_max: state.k_max,
            n: state.n(),
            nu: state.nu,
            t: state.time,
            fields,
        }
    }

    /// Header `magic, version, k_max, n, ν, t` then single-precision
    /// complex values per mode in ascending `k`, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.n * (self.k_max + 1));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k_max as u32).to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&self.nu.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        for f in &self.fields {
            for z in f {
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 36 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let k_max = u32_at(12) as usize;
        let n = u32_at(16) as usize;
        let (nu, t) = (f64_at(20), f64_at(28));
        let expected = 36 + 8 * n * (k_max + 1);
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as f64;
        let fields = (0..=k_max)
            .map(|k| {
                (0..n)
                    .map(|j| {
                        let i = 36 + 8 * (k * n + j);
                        C64::new(f32_at(i), f32_at(i + 4))
                    })
                    .collect()
            })
            .collect();
        Ok(Self { k_max, n, nu, t, fields })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// State at the saved time; the multistep history restarts.
    pub fn restore(&self, profile: &ShearProfile, eps_rate: f64) -> Result<SpectralState> {
        let grid = build_grid(self.n)?;
        let mut state = SpectralState::zero(profile, grid.clone(), self.nu, eps_rate, self.k_max)?;
        for (k, f) in self.fields.iter().enumerate() {
            state.modes[k] = if k == 0 {
                ModeField::mean_flow(&grid, f.iter().map(|z| z.re).collect())
            } else {
                let helm = DirichletHelmholtz::new(grid.clone(), k as f64);
                let psi = helm.solve(f);
                ModeField::from_vorticity(&grid, k, f.clone(), psi)
            };
        }
        state.time = self.t;
        let (u, d2u) = state.evolver.at(self.t);
        state.u = u;
        state.d2u = d2u;
        Ok(state)
    }
}

/// Threshold experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub preset: Preset,
    pub nu_list: Vec<f64>,
    /// Bracket `[c_lo ν^{1/2}, c_hi ν^{1/2} ν^{-0.3}]`.
    pub c_lo: f64,
    pub c_hi: f64,
    /// Horizon in units of `ν^{-1/3}`.
    pub horizon_factor: f64,
    pub bisections: usize,
    pub k_max: usize,
    pub nodes: usize,
    pub init: InitSpec,
    pub eps_rate: f64,
}

/// Smallest viscosity resolved by the default grid.
pub const NU_FLOOR: f64 = 3e-4;

impl ThresholdConfig {
    pub fn new(preset: Preset, nu_list: Vec<f64>) -> Self {
        Self {
            preset,
            nu_list,
            c_lo: 0.01,
            c_hi: 1.0,
            horizon_factor: 5.0,
            bisections: 6,
            k_max: DEFAULT_K_MAX,
            nodes: DEFAULT_NODES,
            init: InitSpec::random(vec![1, 2, 3], 7),
            eps_rate: DEFAULT_EPS0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu_list.len() < 3 {
            return Err(invalid("the threshold probe needs at least three viscosities"));
        }
        for &nu in &self.nu_list {
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(invalid("nu must be positive"));
            }
            if nu < NU_FLOOR {
                return Err(invalid(format!("nu {nu:e} is below the resolved floor {NU_FLOOR:e}")));
            }
        }
        if !(self.c_lo > 0.0) || !(self.c_hi > 0.0) || !self.c_lo.is_finite() || !self.c_hi.is_finite() {
            return Err(invalid("bracket constants must be positive"));
        }
        if !(self.horizon_factor > 0.0) || !self.horizon_factor.is_finite() {
            return Err(invalid("horizon_factor must be positive"));
        }
        for &nu in &self.nu_list {
            let (lo, hi) = self.bracket(nu);
            if !(lo < hi) {
                return Err(invalid(format!("empty amplitude bracket at nu {nu:e}")));
            }
        }
        Ok(())
    }

    pub fn bracket(&self, nu: f64) -> (f64, f64) {
        (self.c_lo * nu.sqrt(), self.c_hi * nu.sqrt() * nu.powf(-0.3))
    }
}

/// One amplitude tried by the bisection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub amplitude: f64,
    pub stable: bool,
    pub max_growth: f64,
    /// `‖ω(T)‖ / ‖ω(0)‖`
    pub omega_ratio: f64,
    pub blow_up: bool,
    pub unresolved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub nu: f64,
    pub a_star: f64,
    pub runs: Vec<ProbeRun>,
    /// The whole bracket was stable; `a_star` is the bracket top.
    pub no_transition_observed: bool,
    /// Already the bracket floor failed; `a_star` is the floor.
    pub unstable_at_floor: bool,
    /// The largest stable run had an unresolved spectral tail.
    pub unresolved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope.
    pub std_err: f64,
    /// `r² < 0.8`
    pub low_r2: bool,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub profile_id: String,
    pub nu_list: Vec<f64>,
    pub records: Vec<ThresholdRecord>,
    pub beta_fit: Option<BetaFit>,
    pub no_transition_observed: bool,
}

/// Runs one amplitude at one viscosity.
pub fn probe_amplitude(profile: &ShearProfile, cfg: &ThresholdConfig, nu: f64, amplitude: f64) -> Result<ProbeRun> {
    let grid = build_grid(cfg.nodes)?;
    let profile = profile.on_grid(grid.clone());
    let stepper = NonlinearStepper::for_profile(grid.clone(), nu, cfg.k_max, &profile)?;
    let init = init_perturbation(&profile, grid, nu, cfg.eps_rate, cfg.k_max, &cfg.init, amplitude)?;
    let w0 = init.norm_omega();
    let steps = crate::linear::steps_for(cfg.horizon_factor * nu.powf(-1.0 / 3.0), stepper.dt());
    let run = run_nonlinear(&stepper, init, steps, 10)?;
    let w1 = run.final_state.norm_omega();
    Ok(ProbeRun {
        amplitude,
        stable: run.stable(),
        max_growth: run.max_growth,
        omega_ratio: if w0 > 0.0 { w1 / w0 } else { 0.0 },
        blow_up: run.blow_up.is_some(),
        unresolved: run.unresolved(),
    })
}

fn bisect(profile: &ShearProfile, cfg: &ThresholdConfig, nu: f64) -> Result<ThresholdRecord> {
    let (mut lo, mut hi) = cfg.bracket(nu);
    let mut runs = Vec::new();
    let floor = probe_amplitude(profile, cfg, nu, lo)?;
    runs.push(floor.clone());
    if !floor.stable {
        return Ok(ThresholdRecord {
            nu,
            a_star: lo,
            unresolved: floor.unresolved,
            runs,
            no_transition_observed: false,
            unstable_at_floor: true,
        });
    }
    let top = probe_amplitude(profile, cfg, nu, hi)?;
    runs.push(top.clone());
    if top.stable {
        return Ok(ThresholdRecord {
            nu,
            a_star: hi,
            unresolved: top.unresolved,
            runs,
            no_transition_observed: true,
            unstable_at_floor: false,
        });
    }
    let mut best_stable = floor;
    for _ in 0..cfg.bisections {
        let mid = (lo * hi).sqrt();
        let r = probe_amplitude(profile, cfg, nu, mid)?;
        if r.stable {
            lo = mid;
            best_stable = r.clone();
        } else {
            hi = mid;
        }
        runs.push(r);
    }
    Ok(ThresholdRecord {
        nu,
        a_star: (lo * hi).sqrt(),
        unresolved: best_stable.unresolved,
        runs,
        no_transition_observed: false,
        unstable_at_floor: false,
    })
}

/// Least-squares slope of `log A*` against `log ν` over resolved records.
pub fn fit_beta(records: &[ThresholdRecord]) -> Option<BetaFit> {
    let pts: Vec<(f64, f64)> = records.iter().filter(|r| !r.unresolved).map(|r| (r.nu, r.a_star)).collect();
    let fit = fit_exponent(&pts).ok()?;
    let m = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let mean = xs.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let res: f64 = pts
        .iter()
        .map(|&(x, y)| (y.ln() - fit.intercept - fit.slope * x.ln()).powi(2))
        .sum();
    let std_err = if m > 2.0 { (res / (m - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    Some(BetaFit {
        beta: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        std_err,
        low_r2: fit.r2 < 0.8,
        points: pts.len(),
    })
}

/// Bisects the critical amplitude at every viscosity and fits its exponent.
pub fn run_threshold_probe(cfg: &ThresholdConfig) -> Result<ThresholdResult> {
    cfg.validate()?;
    let grid = build_grid(cfg.nodes)?;
    let profile = ShearProfile::from_preset(cfg.preset.clone(), grid)?;
    let records = cfg
        .nu_list
        .par_iter()
        .map(|&nu| bisect(&profile, cfg, nu))
        .collect::<Result<Vec<_>>>()?;
    let beta_fit = fit_beta(&records);
    Ok(ThresholdResult {
        profile_id: cfg.preset.id(),
        nu_list: cfg.nu_list.clone(),
        no_transition_observed: records.iter().any(|r| r.no_transition_observed),
        records,
        beta_fit,
    })
}
