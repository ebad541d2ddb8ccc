//! Orr–Sommerfeld resolvent problems in vorticity–stream form.
//!
//! For one Fourier mode `k` and spectral parameter `λ` the unknown is the
//! vorticity `w`; the stream function is `φ = P w` with `P` the Dirichlet
//! inverse of `∂_y² − k²`. Interior collocation rows carry
//!
//! ```text
//! −ν(∂_y² − k²) w + (ik(V − λ) + o) w − ik V'' φ = F
//! ```
//!
//! and the two wall rows select the boundary condition: zero wall slope of
//! `φ` (no-slip) or zero wall vorticity (Navier-slip). The wall-layer
//! correctors use the no-slip rows with unit slope data.

use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{build_grid, ChebGrid, DirichletHelmholtz, ScalarField};
use crate::linalg::{all_finite, matvec_c, ComplexLu, C64};
use crate::profile::ShearProfile;

/// Scalar parameters shared by the resolvent and evolution solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub nu: f64,
    pub k: i64,
    pub lambda: f64,
    pub o_term: C64,
    /// Smallness constant bounding `|o| ≤ eps1 (ν k²)^{1/3}`.
    pub eps1: f64,
    pub eps_rate: f64,
}

pub const DEFAULT_EPS1: f64 = 0.01;

impl ProblemParams {
    pub fn new(nu: f64, k: i64, lambda: f64) -> Result<Self> {
        let p = Self {
            nu,
            k,
            lambda,
            o_term: C64::new(0.0, 0.0),
            eps1: DEFAULT_EPS1,
            eps_rate: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_o_term(mut self, o_term: C64, eps1: f64) -> Result<Self> {
        self.o_term = o_term;
        self.eps1 = eps1;
        self.validate()?;
        Ok(self)
    }

    pub fn with_eps_rate(mut self, eps: f64) -> Result<Self> {
        self.eps_rate = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(invalid("nu must be positive"));
        }
        if !self.lambda.is_finite() {
            return Err(invalid("lambda must be finite"));
        }
        if !(self.eps_rate >= 0.0) {
            return Err(invalid("eps_rate must be nonnegative"));
        }
        if !(self.eps1 >= 0.0) {
            return Err(invalid("eps1 must be nonnegative"));
        }
        let cap = self.eps1 * (self.nu * (self.k * self.k) as f64).cbrt();
        if self.o_term.norm() > cap * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "|o| = {:e} exceeds eps1 (nu k^2)^(1/3) = {cap:e}",
                self.o_term.norm()
            )));
        }
        Ok(())
    }

    fn require_nonzero_k(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("resolvent problems need k != 0"));
        }
        Ok(())
    }

    /// `L = ν^{-1/3} |k|^{1/3}`, the inverse boundary-layer thickness.
    pub fn layer_scale(&self) -> f64 {
        layer_scale(self.nu, self.k)
    }
}

pub fn layer_scale(nu: f64, k: i64) -> f64 {
    ((k.unsigned_abs() as f64) / nu).cbrt()
}

/// Node count resolving the `L⁻¹`-thick layers with at least eight points.
pub fn resolution_nodes(nu: f64, k: i64) -> usize {
    let l = layer_scale(nu, k).ceil() as usize;
    let n = (8 * l).max(129);
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

/// Which pair of wall rows closes the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WallCondition {
    NoSlip,
    NavierSlip,
}

/// Fixed `(ν, k, V, o)` with the `λ`-independent pieces precomputed.
pub struct ResolventOperator {
    grid: Arc<ChebGrid>,
    profile: ShearProfile,
    nu: f64,
    k: i64,
    o_term: C64,
    /// `P`, only needed when `V''` is not identically zero.
    coupling: Option<Mat<f64>>,
    helm: DirichletHelmholtz,
    slope: [Vec<f64>; 2],
}

impl ResolventOperator {
    pub fn new(nu: f64, k: i64, o_term: C64, profile: &ShearProfile, grid: Arc<ChebGrid>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("resolvent problems need k != 0"));
        }
        if !(nu > 0.0) {
            return Err(invalid("nu must be positive"));
        }
        let profile = if Arc::ptr_eq(profile.grid(), &grid) {
            profile.clone()
        } else {
            profile.on_grid(grid.clone())
        };
        let kf = k as f64;
        let helm = DirichletHelmholtz::new(grid.clone(), kf);
        let curved = profile.d2u.iter().any(|&v| v != 0.0);
        let coupling = curved.then(|| helm.solution_matrix());
        let slope = [helm.slope_row(0), helm.slope_row(grid.last())];
        Ok(Self {
            grid,
            profile,
            nu,
            k,
            o_term,
            coupling,
            helm,
            slope,
        })
    }

    /// Operator on the default grid for `(ν, k)`.
    pub fn with_default_grid(params: &ProblemParams, profile: &ShearProfile) -> Result<Self> {
        params.validate()?;
        params.require_nonzero_k()?;
        let grid = build_grid(resolution_nodes(params.nu, params.k))?;
        Self::new(params.nu, params.k, params.o_term, profile, grid)
    }

    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    pub fn profile(&self) -> &ShearProfile {
        &self.profile
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn k(&self) -> i64 {
        self.k
    }

    /// `φ = P w` with the wall entries of `w` ignored.
    pub fn stream(&self, w: &[C64]) -> Vec<C64> {
        match &self.coupling {
            Some(p) => {
                let mut masked = w.to_vec();
                masked[0] = C64::new(0.0, 0.0);
                let last = masked.len() - 1;
                masked[last] = C64::new(0.0, 0.0);
                matvec_c(p, &masked)
            }
            None => self.helm.solve(w),
        }
    }

    pub fn assemble(&self, lambda: f64, wall: WallCondition) -> Mat<C64> {
        let n = self.grid.n();
        let last = n - 1;
        let d2 = self.grid.d2();
        let nu = self.nu;
        let kf = self.k as f64;
        let v = &self.profile.u;
        // Coefficient of P in the interior rows: −ik V''.
        let vpp: Vec<f64> = self.profile.d2u.iter().map(|x| -kf * x).collect();
        let mut a = Mat::<C64>::zeros(n, n);
        for j in 0..n {
            let col = a.col_as_slice_mut(j);
            for (slot, &d) in col.iter_mut().zip(d2.col_as_slice(j)) {
                *slot = C64::new(-nu * d, 0.0);
            }
            if let Some(p) = &self.coupling {
                for ((slot, &pij), &c) in col.iter_mut().zip(p.col_as_slice(j)).zip(&vpp) {
                    slot.im += c * pij;
                }
            }
            if j != 0 && j != last {
                col[j] += C64::new(nu * kf * kf, kf * (v[j] - lambda)) + self.o_term;
            }
            match wall {
                WallCondition::NoSlip => {
                    col[0] = C64::new(self.slope[0][j], 0.0);
                    col[last] = C64::new(self.slope[1][j], 0.0);
                }
                WallCondition::NavierSlip => {
                    col[0] = C64::new(if j == 0 { 1.0 } else { 0.0 }, 0.0);
                    col[last] = C64::new(if j == last { 1.0 } else { 0.0 }, 0.0);
                }
            }
        }
        a
    }

    /// Factorizes the interior rows at `λ`; both wall closures and the
    /// correctors follow from the bordered system.
    pub fn factor(&self, lambda: f64) -> Result<FactoredResolvent<'_>> {
        if !lambda.is_finite() {
            return Err(invalid("lambda must be finite"));
        }
        let n = self.grid.n();
        let m = n - 2;
        let a = self.assemble(lambda, WallCondition::NavierSlip);
        let inner = a.as_ref().submatrix(1, 1, m, m).to_owned();
        let lu = ComplexLu::new(&inner);
        // Interior-homogeneous solutions with unit vorticity on one wall.
        let border = [0, n - 1].map(|wall| {
            let mut x: Vec<C64> = (1..n - 1).map(|i| -a[(i, wall)]).collect();
            lu.solve(&mut x);
            let mut full = vec![C64::new(0.0, 0.0); n];
            full[1..n - 1].copy_from_slice(&x);
            full[wall] = C64::new(1.0, 0.0);
            full
        });
        let slope_of = |row: usize, x: &[C64]| -> C64 {
            self.slope[row].iter().zip(x).map(|(s, v)| v * s).sum()
        };
        let m00 = slope_of(0, &border[0]);
        let m01 = slope_of(0, &border[1]);
        let m10 = slope_of(1, &border[0]);
        let m11 = slope_of(1, &border[1]);
        let det = m00 * m11 - m01 * m10;
        let scale = (m00.norm() + m01.norm()) * (m10.norm() + m11.norm());
        if !det.is_finite() || !(det.norm() > 1e-14 * scale) {
            return Err(self.failure(lambda, "wall influence matrix is singular"));
        }
        let influence_inv = [[m11 / det, -m01 / det], [-m10 / det, m00 / det]];
        let mut rows = vec![0.0f64; n];
        for j in 0..n {
            for (r, z) in rows.iter_mut().zip(a.col_as_slice(j)) {
                *r += z.re.abs() + z.im.abs();
            }
        }
        let wall_norm = |row: usize| self.slope[row].iter().map(|v| v.abs()).sum::<f64>();
        let a_norm = rows[1..n - 1]
            .iter()
            .cloned()
            .fold(wall_norm(0).max(wall_norm(1)).max(1.0), f64::max);
        let mut fac = FactoredResolvent {
            op: self,
            lambda,
            a,
            a_norm,
            lu,
            border,
            influence_inv,
            correctors: Vec::new(),
        };
        let zero = vec![C64::new(0.0, 0.0); n];
        for (which, (s0, s1)) in [(1.0, 0.0), (0.0, -1.0)].into_iter().enumerate() {
            let (s0, s1) = (C64::new(s0, 0.0), C64::new(s1, 0.0));
            let w = fac.close(&zero, s0, s1);
            if !fac.accepts(&w, &zero, WallCondition::NoSlip, (s0, s1)) {
                return Err(self.failure(lambda, &format!("corrector {} is not accurate", which + 1)));
            }
            let phi = self.stream(&w);
            fac.correctors.push(CorrectorPair { w, phi });
        }
        Ok(fac)
    }

    fn interior_rhs(&self, f: &[C64]) -> Result<Vec<C64>> {
        if f.len() != self.grid.n() {
            return Err(invalid("forcing length does not match the operator grid"));
        }
        if !all_finite(f) {
            return Err(invalid("forcing contains non-finite values"));
        }
        let mut b = f.to_vec();
        b[0] = C64::new(0.0, 0.0);
        let last = b.len() - 1;
        b[last] = C64::new(0.0, 0.0);
        Ok(b)
    }

    fn failure(&self, lambda: f64, reason: &str) -> Error {
        Error::SolverFailure {
            nu: self.nu,
            k: self.k,
            lambda,
            reason: reason.to_string(),
        }
    }

    fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let nk2 = self.nu * (self.k * self.k) as f64;
        if nk2 > self.profile.c_max {
            out.push(format!("nu k^2 = {nk2:e} exceeds the slope bound C0 = {:e}", self.profile.c_max));
        }
        out
    }
}

/// Interior factorization at one `λ` with the wall closures.
pub struct FactoredResolvent<'a> {
    op: &'a ResolventOperator,
    lambda: f64,
    /// Interior rows with Navier-slip wall rows.
    a: Mat<C64>,
    a_norm: f64,
    lu: ComplexLu,
    border: [Vec<C64>; 2],
    influence_inv: [[C64; 2]; 2],
    correctors: Vec<CorrectorPair>,
}

impl FactoredResolvent<'_> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn corrector(&self, which: usize) -> &CorrectorPair {
        &self.correctors[which - 1]
    }

    /// Navier-slip solution without checks.
    fn navier_raw(&self, f: &[C64]) -> Vec<C64> {
        let n = f.len();
        let mut x = f[1..n - 1].to_vec();
        self.lu.solve(&mut x);
        let mut full = vec![C64::new(0.0, 0.0); n];
        full[1..n - 1].copy_from_slice(&x);
        full
    }

    /// Adds wall-vorticity modes to `x` so the wall slopes of `φ` equal `(s0, s1)`.
    fn close(&self, x: &[C64], s0: C64, s1: C64) -> Vec<C64> {
        let slope_of = |row: usize| -> C64 {
            self.op.slope[row].iter().zip(x).map(|(s, v)| v * s).sum()
        };
        let (r0, r1) = (s0 - slope_of(0), s1 - slope_of(1));
        let m = &self.influence_inv;
        let alpha = m[0][0] * r0 + m[0][1] * r1;
        let beta = m[1][0] * r0 + m[1][1] * r1;
        x.iter()
            .zip(&self.border[0])
            .zip(&self.border[1])
            .map(|((v, a), b)| v + alpha * a + beta * b)
            .collect()
    }

    fn apply(&self, x: &[C64], wall: WallCondition) -> Vec<C64> {
        let n = x.len();
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (j, &xj) in x.iter().enumerate() {
            for (o, &aij) in out.iter_mut().zip(self.a.col_as_slice(j)) {
                *o += aij * xj;
            }
        }
        if wall == WallCondition::NoSlip {
            for (row, idx) in [(0, 0), (1, n - 1)] {
                out[idx] = self.op.slope[row].iter().zip(x).map(|(s, v)| v * s).sum();
            }
        }
        out
    }

    /// Normwise backward-error test against the full square system.
    fn accepts(&self, x: &[C64], f: &[C64], wall: WallCondition, data: (C64, C64)) -> bool {
        if !all_finite(x) {
            return false;
        }
        let n = x.len();
        let mut b = f.to_vec();
        b[0] = data.0;
        b[n - 1] = data.1;
        let r = self.apply(x, wall);
        let res = r
            .iter()
            .zip(&b)
            .map(|(ri, bi)| (ri - bi).norm())
            .fold(0.0, f64::max);
        let xn = crate::linalg::max_abs(x);
        let bn = crate::linalg::max_abs(&b);
        res <= 1e-8 * (self.a_norm * xn + bn)
    }

    /// Relative interior residual `‖(A x − F)_int‖ / ‖F‖`.
    fn residual(&self, x: &[C64], f: &[C64]) -> f64 {
        let grid = &self.op.grid;
        let fnorm = grid.l2(f);
        if fnorm == 0.0 {
            return 0.0;
        }
        let mut r = self.apply(x, WallCondition::NavierSlip);
        for (ri, fi) in r.iter_mut().zip(f) {
            *ri -= fi;
        }
        let last = r.len() - 1;
        r[0] = C64::new(0.0, 0.0);
        r[last] = C64::new(0.0, 0.0);
        grid.l2(&r) / fnorm
    }

    fn checked(&self, f: &[C64], wall: WallCondition) -> Result<(Vec<C64>, f64)> {
        let f = self.op.interior_rhs(f)?;
        let zero = C64::new(0.0, 0.0);
        let na = self.navier_raw(&f);
        let x = match wall {
            WallCondition::NavierSlip => na,
            WallCondition::NoSlip => self.close(&na, zero, zero),
        };
        if !self.accepts(&x, &f, wall, (zero, zero)) {
            return Err(self.op.failure(self.lambda, "resolvent system is numerically singular"));
        }
        let residual = self.residual(&x, &f);
        Ok((x, residual))
    }

    pub fn solve_noslip(&self, f: &[C64]) -> Result<NoSlipSolution> {
        let (w, residual) = self.checked(f, WallCondition::NoSlip)?;
        let phi = self.op.stream(&w);
        Ok(NoSlipSolution { w, phi, residual })
    }

    pub fn solve_navier(&self, f: &[C64]) -> Result<NavierSolution> {
        let (w_na, residual) = self.checked(f, WallCondition::NavierSlip)?;
        let phi_na = self.op.stream(&w_na);
        Ok(NavierSolution { w_na, phi_na, residual })
    }

    /// No-slip solve, Navier-slip solve and the corrector decomposition.
    pub fn solve(&self, f: &[C64]) -> Result<ResolventSolution> {
        let ns = self.solve_noslip(f)?;
        let na = self.solve_navier(f)?;
        let (c1, c2) = coefficient_pair(&self.op.grid, &na.w_na, self.op.k as f64);
        let a = self.corrector(1).clone();
        let b = self.corrector(2).clone();
        Ok(ResolventSolution {
            grid: self.op.grid.clone(),
            nu: self.op.nu,
            k: self.op.k,
            lambda: self.lambda,
            w: ns.w,
            phi: ns.phi,
            w_na: na.w_na,
            phi_na: na.phi_na,
            w1: a.w,
            phi1: a.phi,
            w2: b.w,
            phi2: b.phi,
            c1,
            c2,
            residual: ns.residual,
            warnings: self.op.warnings(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct NoSlipSolution {
    pub w: Vec<C64>,
    pub phi: Vec<C64>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct NavierSolution {
    pub w_na: Vec<C64>,
    pub phi_na: Vec<C64>,
    pub residual: f64,
}

/// Homogeneous solution concentrated in one wall layer.
///
/// Corrector 1 has `∂_yφ(0) = 1, ∂_yφ(1) = 0`; corrector 2 has
/// `∂_yφ(0) = 0, ∂_yφ(1) = −1`. With these signs the no-slip solution is
/// `w_na + c1 w1 + c2 w2` for the sinh-kernel coefficients.
#[derive(Clone, Debug)]
pub struct CorrectorPair {
    pub w: Vec<C64>,
    pub phi: Vec<C64>,
}

/// No-slip solution together with its Navier-slip decomposition.
#[derive(Clone, Debug)]
pub struct ResolventSolution {
    pub grid: Arc<ChebGrid>,
    pub nu: f64,
    pub k: i64,
    pub lambda: f64,
    pub w: Vec<C64>,
    pub phi: Vec<C64>,
    pub w_na: Vec<C64>,
    pub phi_na: Vec<C64>,
    pub w1: Vec<C64>,
    pub phi1: Vec<C64>,
    pub w2: Vec<C64>,
    pub phi2: Vec<C64>,
    pub c1: C64,
    pub c2: C64,
    pub residual: f64,
    pub warnings: Vec<String>,
}

impl ResolventSolution {
    pub fn recomposed(&self) -> Vec<C64> {
        self.w_na
            .iter()
            .zip(&self.w1)
            .zip(&self.w2)
            .map(|((a, b), c)| a + self.c1 * b + self.c2 * c)
            .collect()
    }

    /// `‖w − (w_na + c1 w1 + c2 w2)‖ / ‖w‖`.
    pub fn recomposition_residual(&self) -> f64 {
        let diff: Vec<C64> = self
            .w
            .iter()
            .zip(self.recomposed())
            .map(|(a, b)| a - b)
            .collect();
        let wn = self.grid.l2(&self.w);
        let dn = self.grid.l2(&diff);
        if wn == 0.0 {
            dn
        } else {
            dn / wn
        }
    }

    /// Wall values of `∂_y φ` for the no-slip stream function.
    pub fn wall_slopes(&self) -> (C64, C64) {
        wall_slopes(&self.grid, &self.phi)
    }
}

pub fn wall_slopes(grid: &ChebGrid, phi: &[C64]) -> (C64, C64) {
    let last = grid.last();
    (
        crate::linalg::row_dot_c(grid.d1(), 0, phi),
        crate::linalg::row_dot_c(grid.d1(), last, phi),
    )
}

fn operator_for(params: &ProblemParams, profile: &ShearProfile, grid: &Arc<ChebGrid>) -> Result<ResolventOperator> {
    params.validate()?;
    params.require_nonzero_k()?;
    ResolventOperator::new(params.nu, params.k, params.o_term, profile, grid.clone())
}

/// No-slip resolvent solve on the grid of `f`.
pub fn solve_noslip(params: &ProblemParams, profile: &ShearProfile, f: &ScalarField) -> Result<NoSlipSolution> {
    let op = operator_for(params, profile, f.grid())?;
    op.factor(params.lambda)?.solve_noslip(f.values())
}

/// Navier-slip resolvent solve on the grid of `f`.
pub fn solve_navier_slip(params: &ProblemParams, profile: &ShearProfile, f: &ScalarField) -> Result<NavierSolution> {
    let op = operator_for(params, profile, f.grid())?;
    op.factor(params.lambda)?.solve_navier(f.values())
}

/// Wall-layer corrector `which ∈ {1, 2}` on `grid`.
pub fn solve_corrector(
    params: &ProblemParams,
    profile: &ShearProfile,
    grid: &Arc<ChebGrid>,
    which: usize,
) -> Result<CorrectorPair> {
    if which != 1 && which != 2 {
        return Err(invalid("corrector index must be 1 or 2"));
    }
    let op = operator_for(params, profile, grid)?;
    Ok(op.factor(params.lambda)?.corrector(which).clone())
}

/// Full decomposition: no-slip, Navier-slip, both correctors and coefficients.
pub fn solve_decomposed(params: &ProblemParams, profile: &ShearProfile, f: &ScalarField) -> Result<ResolventSolution> {
    let op = operator_for(params, profile, f.grid())?;
    op.factor(params.lambda)?.solve(f.values())
}

/// `(sinh(κ(1−y)), sinh(κy)) / sinh κ` with `κ = |k|`, overflow-safe.
pub fn sinh_kernels(y: f64, k: f64) -> (f64, f64) {
    let kk = k.abs();
    let den = -(-2.0 * kk).exp_m1();
    let left = (-kk * y).exp() * -(-2.0 * kk * (1.0 - y)).exp_m1() / den;
    let right = (-kk * (1.0 - y)).exp() * -(-2.0 * kk * y).exp_m1() / den;
    (left, right)
}

fn coefficient_pair(grid: &ChebGrid, w_na: &[C64], k: f64) -> (C64, C64) {
    let mut c1 = C64::new(0.0, 0.0);
    let mut c2 = C64::new(0.0, 0.0);
    for ((&y, &q), &w) in grid.nodes().iter().zip(grid.quad()).zip(w_na) {
        let (a, b) = sinh_kernels(y, k);
        c1 += w * (a * q);
        c2 += w * (b * q);
    }
    (c1, c2)
}

/// Sinh-kernel moments of the Navier-slip vorticity.
pub fn coefficients(w_na: &ScalarField, k: f64) -> Result<(C64, C64)> {
    if k == 0.0 || !k.is_finite() {
        return Err(invalid("coefficients need a finite nonzero k"));
    }
    Ok(coefficient_pair(w_na.grid(), w_na.values(), k))
}

/// `∫ w_na conj(f) dy`.
pub fn weak_pairing(solution: &ResolventSolution, f: &ScalarField) -> Result<C64> {
    if !f.is_finite() {
        return Err(invalid("pairing field contains non-finite values"));
    }
    if f.values().len() != solution.w_na.len() {
        return Err(invalid("pairing field lives on a different grid"));
    }
    Ok(solution.grid.inner(&solution.w_na, f.values()))
}

/// Tent weight `min(1, L y, L (1 − y))`.
#[derive(Clone, Debug)]
pub struct WeightFn {
    pub l: f64,
    pub values: Vec<f64>,
}

pub fn weight_at(l: f64, y: f64) -> f64 {
    (l * y).min(l * (1.0 - y)).clamp(0.0, 1.0)
}

pub fn make_weight(params: &ProblemParams, grid: &ChebGrid) -> Result<WeightFn> {
    params.validate()?;
    params.require_nonzero_k()?;
    let l = params.layer_scale();
    Ok(WeightFn {
        l,
        values: grid.nodes().iter().map(|&y| weight_at(l, y)).collect(),
    })
}

/// Smooth cutoff of the critical layer `E_δ = {|V − λ| < δ}`.
#[derive(Clone, Debug)]
pub struct CutoffFn {
    pub delta: f64,
    pub values: Vec<f64>,
    pub complement: Vec<f64>,
    pub e_delta_mask: Vec<bool>,
    /// `χ_δ / (V − λ)`, evaluated without division inside `E_δ`.
    pub over_shift: Vec<f64>,
}

pub fn make_cutoff(params: &ProblemParams, profile: &ShearProfile, delta: f64) -> Result<CutoffFn> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(invalid("cutoff width must be positive"));
    }
    let d2 = delta * delta;
    let d4 = d2 * d2;
    let mut values = Vec::with_capacity(profile.u.len());
    let mut over = Vec::with_capacity(profile.u.len());
    let mut mask = Vec::with_capacity(profile.u.len());
    for &v in &profile.u {
        let s = v - params.lambda;
        if s.abs() < delta {
            values.push(2.0 * s * s / d2 - s.powi(4) / d4);
            over.push(2.0 * s / d2 - s.powi(3) / d4);
            mask.push(true);
        } else {
            values.push(1.0);
            over.push(1.0 / s);
            mask.push(false);
        }
    }
    Ok(CutoffFn {
        delta,
        complement: values.iter().map(|c| 1.0 - c).collect(),
        values,
        e_delta_mask: mask,
        over_shift: over,
    })
}

/// Critical-layer width `ν^{1/3} |k|^{-1/3}`.
pub fn delta0(nu: f64, k: i64) -> f64 {
    1.0 / layer_scale(nu, k)
}

/// `1 / |k|`.
pub fn delta1(k: i64) -> f64 {
    1.0 / k.unsigned_abs() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Preset;
    use std::f64::consts::PI;

    fn profile(preset: Preset, grid: &Arc<ChebGrid>) -> ShearProfile {
        ShearProfile::from_preset(preset, grid.clone()).unwrap()
    }

    fn sine(grid: &Arc<ChebGrid>) -> ScalarField {
        ScalarField::from_real_fn(grid.clone(), |y| (PI * y).sin())
    }

    /// Complex tridiagonal solve (Thomas algorithm).
    fn thomas(lower: &[C64], diag: &[C64], upper: &[C64], rhs: &[C64]) -> Vec<C64> {
        let n = diag.len();
        let mut c = vec![C64::new(0.0, 0.0); n];
        let mut d = vec![C64::new(0.0, 0.0); n];
        c[0] = upper[0] / diag[0];
        d[0] = rhs[0] / diag[0];
        for i in 1..n {
            let den = diag[i] - lower[i] * c[i - 1];
            if i + 1 < n {
                c[i] = upper[i] / den;
            }
            d[i] = (rhs[i] - lower[i] * d[i - 1]) / den;
        }
        let mut x = vec![C64::new(0.0, 0.0); n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }

    /// Second-order finite differences for `−ν(w'' − k²w) + ik(y − λ)w = f`
    /// on `m` uniform intervals with wall values `a`, `b`.
    fn fd_couette(nu: f64, k: f64, lambda: f64, m: usize, f: &dyn Fn(f64) -> f64, a: C64, b: C64) -> Vec<C64> {
        let h = 1.0 / m as f64;
        let inner = m - 1;
        let off = C64::new(-nu / (h * h), 0.0);
        let mut lower = vec![off; inner];
        let mut upper = vec![off; inner];
        let mut diag = vec![C64::new(0.0, 0.0); inner];
        let mut rhs = vec![C64::new(0.0, 0.0); inner];
        for i in 0..inner {
            let y = (i + 1) as f64 * h;
            diag[i] = C64::new(2.0 * nu / (h * h) + nu * k * k, k * (y - lambda));
            rhs[i] = C64::new(f(y), 0.0);
        }
        lower[0] = C64::new(0.0, 0.0);
        upper[inner - 1] = C64::new(0.0, 0.0);
        rhs[0] -= off * a;
        rhs[inner - 1] -= off * b;
        let x = thomas(&lower, &diag, &upper, &rhs);
        let mut out = vec![a];
        out.extend(x);
        out.push(b);
        out
    }

    fn trapezoid(vals: &[C64], weight: impl Fn(f64) -> f64) -> C64 {
        let m = vals.len() - 1;
        let h = 1.0 / m as f64;
        let mut s = C64::new(0.0, 0.0);
        for (i, v) in vals.iter().enumerate() {
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            s += v * (w * h * weight(i as f64 * h));
        }
        s
    }

    /// Independent no-slip oracle for Couette: Dirichlet vorticity solves
    /// combined so that the sinh moments (the wall slopes of φ) vanish.
    fn fd_noslip_couette(nu: f64, k: f64, lambda: f64, m: usize, f: &dyn Fn(f64) -> f64) -> Vec<C64> {
        let z = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let zero_f = |_: f64| 0.0;
        let wp = fd_couette(nu, k, lambda, m, f, z, z);
        let wa = fd_couette(nu, k, lambda, m, &zero_f, one, z);
        let wb = fd_couette(nu, k, lambda, m, &zero_f, z, one);
        let g0 = |y: f64| sinh_kernels(y, k).0;
        let g1 = |y: f64| sinh_kernels(y, k).1;
        let mom = |w: &[C64]| (trapezoid(w, g0), trapezoid(w, g1));
        let (p0, p1) = mom(&wp);
        let (a0, a1) = mom(&wa);
        let (b0, b1) = mom(&wb);
        let det = a0 * b1 - b0 * a1;
        let ca = (-p0 * b1 + b0 * p1) / det;
        let cb = (-a0 * p1 + p0 * a1) / det;
        wp.iter()
            .zip(&wa)
            .zip(&wb)
            .map(|((p, a), b)| p + ca * a + cb * b)
            .collect()
    }

    fn interpolate_fd(vals: &[C64], y: f64) -> C64 {
        let m = vals.len() - 1;
        let x = y * m as f64;
        let i = (x.floor() as usize).min(m - 1);
        let t = x - i as f64;
        vals[i] * (1.0 - t) + vals[i + 1] * t
    }

    fn rel_l2_vs_fd(grid: &ChebGrid, w: &[C64], fd: &dyn Fn(f64) -> C64) -> f64 {
        let diff: Vec<C64> = grid.nodes().iter().zip(w).map(|(&y, v)| v - fd(y)).collect();
        grid.l2(&diff) / grid.l2(w)
    }

    #[test]
    fn couette_noslip_matches_finite_differences() {
        let (nu, k, lambda) = (1e-3, 1.0, 0.5);
        let g = build_grid(257).unwrap();
        let p = profile(Preset::Couette, &g);
        let params = ProblemParams::new(nu, 1, lambda).unwrap();
        let sol = solve_noslip(&params, &p, &sine(&g)).unwrap();
        let f = |y: f64| (PI * y).sin();
        // Richardson extrapolation of two second-order oracles.
        let coarse = fd_noslip_couette(nu, k, lambda, 2048, &f);
        let fine = fd_noslip_couette(nu, k, lambda, 4096, &f);
        let oracle = |y: f64| {
            let a = interpolate_fd(&coarse, y);
            let b = interpolate_fd(&fine, y);
            b + (b - a) / 3.0
        };
        let rel = rel_l2_vs_fd(&g, &sol.w, &oracle);
        assert!(rel < 1e-5, "relative difference {rel}");
    }

    #[test]
    fn couette_navier_matches_tridiagonal_oracle() {
        let (nu, k, lambda) = (1e-3, 2.0, 0.3);
        let g = build_grid(257).unwrap();
        let p = profile(Preset::Couette, &g);
        let params = ProblemParams::new(nu, 2, lambda).unwrap();
        let sol = solve_navier_slip(&params, &p, &sine(&g)).unwrap();
        let f = |y: f64| (PI * y).sin();
        let z = C64::new(0.0, 0.0);
        let coarse = fd_couette(nu, k, lambda, 4096, &f, z, z);
        let fine = fd_couette(nu, k, lambda, 8192, &f, z, z);
        let oracle = |y: f64| {
            let a = interpolate_fd(&coarse, y);
            let b = interpolate_fd(&fine, y);
            b + (b - a) / 3.0
        };
        let rel = rel_l2_vs_fd(&g, &sol.w_na, &oracle);
        assert!(rel < 1e-6, "relative difference {rel}");
    }

    #[test]
    fn zero_forcing_gives_zero_solution() {
        let g = build_grid(129).unwrap();
        let p = profile(Preset::SinusConcave(0.1), &g);
        let params = ProblemParams::new(1e-4, 1, 0.5).unwrap();
        let zero = ScalarField::zeros(g.clone());
        let sol = solve_decomposed(&params, &p, &zero).unwrap();
        assert_eq!(crate::linalg::max_abs(&sol.w), 0.0);
        assert_eq!(crate::linalg::max_abs(&sol.phi), 0.0);
        assert_eq!(crate::linalg::max_abs(&sol.w_na), 0.0);
        assert_eq!((sol.c1, sol.c2), (C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
    }

    #[test]
    fn rejects_zero_wavenumber_and_bad_viscosity() {
        let g = build_grid(65).unwrap();
        let p = profile(Preset::Couette, &g);
        let params = ProblemParams {
            k: 0,
            ..ProblemParams::new(1e-3, 1, 0.5).unwrap()
        };
        assert!(solve_noslip(&params, &p, &sine(&g)).is_err());
        assert!(ProblemParams::new(-1.0, 1, 0.5).is_err());
        assert!(ProblemParams::new(1e-3, 1, 0.5)
            .unwrap()
            .with_o_term(C64::new(1.0, 0.0), 0.01)
            .is_err());
    }

    #[test]
    fn boundary_invariants_and_decomposition() {
        let (nu, k) = (1e-4, 2);
        let g = build_grid(resolution_nodes(nu, k)).unwrap();
        let p = profile(Preset::PolyConcave(1.0), &g);
        let params = ProblemParams::new(nu, k, 0.4).unwrap();
        let f = ScalarField::from_real_fn(g.clone(), |y| (-(y - 0.3f64).powi(2) / 0.01).exp());
        let sol = solve_decomposed(&params, &p, &f).unwrap();
        let last = g.last();
        for phi in [&sol.phi, &sol.phi_na, &sol.phi1, &sol.phi2] {
            assert!(phi[0].norm() < 1e-10 && phi[last].norm() < 1e-10);
        }
        let (s0, s1) = sol.wall_slopes();
        let scale = sol.phi.iter().map(|z| z.norm()).fold(1.0, f64::max);
        assert!(s0.norm() < 1e-8 * scale && s1.norm() < 1e-8 * scale);
        assert!(sol.w_na[0].norm() < 1e-10 && sol.w_na[last].norm() < 1e-10);
        let (a0, a1) = wall_slopes(&g, &sol.phi1);
        let (b0, b1) = wall_slopes(&g, &sol.phi2);
        assert!((a0 - 1.0).norm() < 1e-8 && a1.norm() < 1e-8);
        assert!(b0.norm() < 1e-8 && (b1 + 1.0).norm() < 1e-8);
        assert!(sol.recomposition_residual() < 1e-7, "{}", sol.recomposition_residual());
        assert!(sol.residual < 1e-8);
    }

    #[test]
    fn bordered_solve_matches_direct_factorization() {
        let (nu, k, lambda) = (1e-5, 4, 0.62);
        let g = build_grid(resolution_nodes(nu, k)).unwrap();
        let p = profile(Preset::TwoModeConcave(0.1), &g);
        let op = ResolventOperator::new(nu, k, C64::new(0.0, 0.0), &p, g.clone()).unwrap();
        let f: Vec<C64> = g.nodes().iter().map(|&y| C64::new(y.cos(), (3.0 * y).sin())).collect();
        let fac = op.factor(lambda).unwrap();
        for wall in [WallCondition::NoSlip, WallCondition::NavierSlip] {
            let bordered = match wall {
                WallCondition::NoSlip => fac.solve_noslip(&f).unwrap().w,
                WallCondition::NavierSlip => fac.solve_navier(&f).unwrap().w_na,
            };
            let a = op.assemble(lambda, wall);
            let mut direct = f.clone();
            direct[0] = C64::new(0.0, 0.0);
            let last = direct.len() - 1;
            direct[last] = C64::new(0.0, 0.0);
            ComplexLu::new(&a).solve(&mut direct);
            let diff: Vec<C64> = bordered.iter().zip(&direct).map(|(x, y)| x - y).collect();
            assert!(g.l2(&diff) < 1e-10 * g.l2(&direct), "{wall:?}");
        }
    }

    #[test]
    fn coefficient_closed_form() {
        let g = build_grid(129).unwrap();
        let w = ScalarField::from_real_fn(g.clone(), |y| (1.0 - y).sinh() / 1f64.sinh());
        let (c1, _) = coefficients(&w, 1.0).unwrap();
        let s1 = 1f64.sinh();
        let expect = (2f64.sinh() / 2.0 - 1.0) / (2.0 * s1 * s1);
        assert!((c1.re - expect).abs() < 1e-10 && c1.im.abs() < 1e-15);
        let zero = ScalarField::zeros(g);
        assert_eq!(coefficients(&zero, 3.0).unwrap(), (C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
    }

    #[test]
    fn sinh_kernels_are_stable_for_large_k() {
        for k in [1.0, 50.0, 800.0, 5000.0] {
            for y in [0.0, 1e-3, 0.5, 1.0] {
                let (a, b) = sinh_kernels(y, k);
                assert!(a.is_finite() && b.is_finite());
                assert!((0.0..=1.0 + 1e-15).contains(&a));
            }
            assert!((sinh_kernels(0.0, k).0 - 1.0).abs() < 1e-15);
            assert!((sinh_kernels(1.0, k).1 - 1.0).abs() < 1e-15);
        }
        let (a, b) = sinh_kernels(0.3, 2.0);
        assert!((a - (2.0 * 0.7f64).sinh() / 2f64.sinh()).abs() < 1e-14);
        assert!((b - (0.6f64).sinh() / 2f64.sinh()).abs() < 1e-14);
    }

    #[test]
    fn weak_pairing_identities() {
        let g = build_grid(129).unwrap();
        let p = profile(Preset::SinusConvex(0.1), &g);
        let params = ProblemParams::new(1e-3, 1, 0.5).unwrap();
        let sol = solve_decomposed(&params, &p, &sine(&g)).unwrap();
        let zero = ScalarField::zeros(g.clone());
        assert_eq!(weak_pairing(&sol, &zero).unwrap(), C64::new(0.0, 0.0));
        let self_pair = weak_pairing(&sol, &ScalarField::new(g.clone(), sol.w_na.clone()).unwrap()).unwrap();
        assert!((self_pair.re - g.l2(&sol.w_na).powi(2)).abs() < 1e-12 * self_pair.re);
        let kernel = ScalarField::from_real_fn(g.clone(), |y| sinh_kernels(y, 1.0).0);
        assert!((weak_pairing(&sol, &kernel).unwrap() - sol.c1).norm() < 1e-14);
    }

    #[test]
    fn weight_shape() {
        let g = build_grid(129).unwrap();
        let params = ProblemParams::new(1e-3, 1, 0.5).unwrap();
        let w = make_weight(&params, &g).unwrap();
        assert!((w.l - 10.0).abs() < 1e-12);
        assert_eq!(w.values[0], 0.0);
        assert_eq!(w.values[128], 0.0);
        assert_eq!(w.values[64], 1.0);
        assert!(w.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cutoff_vanishes_on_the_critical_layer() {
        let g = build_grid(129).unwrap();
        let p = profile(Preset::Couette, &g);
        let params = ProblemParams::new(1e-3, 1, 0.5).unwrap();
        let c = make_cutoff(&params, &p, 0.1).unwrap();
        // y = 1/2 is a node up to rounding.
        assert!(c.values[64] < 1e-28);
        assert!(c.over_shift[64].abs() < 1e-13);
        assert!(c.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(c.over_shift.iter().all(|v| v.is_finite()));
        for (m, v) in c.e_delta_mask.iter().zip(&c.values) {
            if !m {
                assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn cutoff_quotient_norm_scales_like_inverse_root_delta() {
        // Closed form on Couette with λ = 1/2: δ‖χ/(V−λ)‖² = 2(4/3 − 4/5 + 1/7) + 2 − 4δ.
        let g = build_grid(4001).unwrap();
        let p = profile(Preset::Couette, &g);
        let params = ProblemParams::new(1e-3, 1, 0.5).unwrap();
        let mut consts = Vec::new();
        for delta in [1e-1, 1e-2, 1e-3] {
            let c = make_cutoff(&params, &p, delta).unwrap();
            let n = g.l2_real(&c.over_shift);
            let exact = ((2.0 * (4.0 / 3.0 - 0.8 + 1.0 / 7.0) + 2.0 - 4.0 * delta) / delta).sqrt();
            assert!((n - exact).abs() < 1e-3 * exact, "delta {delta}: {n} vs {exact}");
            consts.push(n * delta.sqrt());
        }
        let (lo, hi) = consts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
        assert!(hi / lo < 3.0);
    }

    #[test]
    fn reflection_swaps_correctors() {
        let g = build_grid(257).unwrap();
        for preset in [Preset::Couette, Preset::TanhMonotone(2.0)] {
            let p = profile(preset, &g);
            let (v0, v1) = p.wall_values();
            let lambda = 0.3;
            let params = ProblemParams::new(1e-3, 2, lambda).unwrap();
            let w2 = solve_corrector(&params, &p, &g, 2).unwrap();
            let reflected = ProblemParams::new(1e-3, 2, v0 + v1 - lambda).unwrap();
            let w1 = solve_corrector(&reflected, &p, &g, 1).unwrap();
            let (a, b) = (g.l2(&w1.w), g.l2(&w2.w));
            assert!((a - b).abs() < 1e-8 * a, "{a} vs {b}");
        }
    }

    #[test]
    fn navier_constant_is_stable_under_refinement() {
        let (nu, k, lambda) = (1e-4, 1, 0.5);
        let ratio = |n: usize| {
            let g = build_grid(n).unwrap();
            let p = profile(Preset::SinusConcave(0.1), &g);
            let params = ProblemParams::new(nu, k, lambda).unwrap();
            let f = sine(&g);
            let sol = solve_navier_slip(&params, &p, &f).unwrap();
            let dual = crate::grid::norm(&f, crate::grid::NormKind::H1kDual(k as f64)).unwrap();
            nu.powf(2.0 / 3.0) * g.l2(&sol.w_na) / dual
        };
        let (a, b) = (ratio(129), ratio(257));
        assert!((a / b - 1.0).abs() < 0.2, "{a} {b}");
    }

    #[test]
    fn grid_refinement_changes_noslip_norm_little() {
        for (nu, k) in [(1e-4, 1i64), (1e-6, 8)] {
            let norm_at = |n: usize| {
                let g = build_grid(n).unwrap();
                let p = profile(Preset::PolyConvex(1.0), &g);
                let params = ProblemParams::new(nu, k, 0.45).unwrap();
                g.l2(&solve_noslip(&params, &p, &sine(&g)).unwrap().w)
            };
            let n = resolution_nodes(nu, k);
            let (a, b) = (norm_at(n), norm_at(2 * n - 1));
            assert!((a / b - 1.0).abs() < 1e-4, "nu {nu} k {k}: {a} {b}");
        }
    }

    #[test]
    fn resolution_policy() {
        assert_eq!(resolution_nodes(1e-3, 1), 129);
        let n = resolution_nodes(1e-6, 1);
        assert!(n >= 800 && n % 2 == 1);
    }
}
