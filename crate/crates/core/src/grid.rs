//! Chebyshev–Gauss–Lobatto collocation on the channel `[0, 1]`.
//!
//! Nodes are stored in increasing order, `y[0] = 0` and `y[n-1] = 1`. The
//! differentiation matrices act on point values; quadrature is
//! Clenshaw–Curtis on the same nodes.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::Mat;

use crate::error::{invalid, Result};
use crate::linalg::{matvec_c, RealLu, C64};

pub const MIN_NODES: usize = 8;

/// Collocation grid with first/second differentiation matrices and
/// quadrature weights.
pub struct ChebGrid {
    n: usize,
    nodes: Vec<f64>,
    d1: Mat<f64>,
    d2: Mat<f64>,
    quad: Vec<f64>,
    bary: Vec<f64>,
}

impl std::fmt::Debug for ChebGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChebGrid").field("n", &self.n).finish()
    }
}

impl ChebGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(invalid(format!("grid needs at least {MIN_NODES} nodes, got {n}")));
        }
        let big_n = n - 1;
        let nf = big_n as f64;
        let nodes: Vec<f64> = (0..n)
            .map(|j| {
                // (1 - x_j) / 2 = sin^2(j pi / 2N)
                let s = (PI * j as f64 / (2.0 * nf)).sin();
                s * s
            })
            .collect();

        let c = |i: usize| if i == 0 || i == big_n { 2.0 } else { 1.0 };
        let sign = |i: usize| if i.is_multiple_of(2) { 1.0 } else { -1.0 };
        // x_i - x_j via the product formula avoids cancellation near the ends.
        let sines: Vec<f64> = (0..=2 * big_n)
            .map(|m| (PI * m as f64 / (2.0 * nf)).sin())
            .collect();
        let dx = |i: usize, j: usize| {
            let diff = if j >= i { sines[j - i] } else { -sines[i - j] };
            2.0 * sines[i + j] * diff
        };

        let off = |i: usize, j: usize| c(i) / c(j) * sign(i + j) / dx(i, j);
        // Negative-sum diagonal of the first-derivative matrix.
        let diag1: Vec<f64> = (0..n)
            .map(|i| -(0..n).filter(|&j| j != i).map(|j| off(i, j)).sum::<f64>())
            .collect();
        // Fill column by column; y = (1 - x) / 2 gives d/dy = -2 d/dx.
        let mut d1 = Mat::<f64>::zeros(n, n);
        let mut d2 = Mat::<f64>::zeros(n, n);
        let mut sum2 = vec![0.0; n];
        for j in 0..n {
            let c1 = d1.col_as_slice_mut(j);
            for (i, slot) in c1.iter_mut().enumerate() {
                *slot = if i == j { diag1[i] } else { off(i, j) };
            }
            let c2 = d2.col_as_slice_mut(j);
            for (i, slot) in c2.iter_mut().enumerate() {
                if i != j {
                    let v = 2.0 * off(i, j) * (diag1[i] - 1.0 / dx(i, j));
                    *slot = 4.0 * v;
                    sum2[i] += v;
                }
            }
        }
        for i in 0..n {
            d2[(i, i)] = -4.0 * sum2[i];
        }
        for j in 0..n {
            d1.col_as_slice_mut(j).iter_mut().for_each(|v| *v *= -2.0);
        }

        let quad = clenshaw_curtis(big_n);
        let bary = (0..n)
            .map(|j| {
                let w = sign(j);
                if j == 0 || j == big_n {
                    0.5 * w
                } else {
                    w
                }
            })
            .collect();
        Ok(Self {
            n,
            nodes,
            d1,
            d2,
            quad,
            bary,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn d1(&self) -> &Mat<f64> {
        &self.d1
    }

    pub fn d2(&self) -> &Mat<f64> {
        &self.d2
    }

    pub fn quad(&self) -> &[f64] {
        &self.quad
    }

    pub fn last(&self) -> usize {
        self.n - 1
    }

    /// First derivative of complex point values.
    pub fn diff(&self, f: &[C64]) -> Vec<C64> {
        matvec_c(&self.d1, f)
    }

    pub fn diff2(&self, f: &[C64]) -> Vec<C64> {
        matvec_c(&self.d2, f)
    }

    pub fn diff_real(&self, f: &[f64]) -> Vec<f64> {
        crate::linalg::matvec(&self.d1, f)
    }

    pub fn integrate(&self, f: &[C64]) -> C64 {
        f.iter().zip(&self.quad).map(|(v, w)| v * w).sum()
    }

    pub fn integrate_real(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.quad).map(|(v, w)| v * w).sum()
    }

    /// `∫ f conj(g) dy`.
    pub fn inner(&self, f: &[C64], g: &[C64]) -> C64 {
        f.iter()
            .zip(g)
            .zip(&self.quad)
            .map(|((a, b), w)| a * b.conj() * w)
            .sum()
    }

    pub fn l2(&self, f: &[C64]) -> f64 {
        f.iter()
            .zip(&self.quad)
            .map(|(v, w)| v.norm_sqr() * w)
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    pub fn l2_real(&self, f: &[f64]) -> f64 {
        f.iter()
            .zip(&self.quad)
            .map(|(v, w)| v * v * w)
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    /// `(‖∂_y f‖² + k²‖f‖²)^{1/2}`.
    pub fn h1k(&self, f: &[C64], k: f64) -> f64 {
        let df = self.diff(f);
        let a = self.l2(&df);
        let b = self.l2(f);
        (a * a + k * k * b * b).sqrt()
    }

    /// Barycentric interpolation of point values at an arbitrary `y`.
    pub fn interpolate(&self, f: &[C64], y: f64) -> C64 {
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        for (j, (&yj, &wj)) in self.nodes.iter().zip(&self.bary).enumerate() {
            let d = y - yj;
            if d == 0.0 {
                return f[j];
            }
            let t = wj / d;
            num += f[j] * t;
            den += t;
        }
        num / den
    }
}

/// Clenshaw–Curtis weights for the `N + 1` Lobatto points, scaled to `[0, 1]`.
fn clenshaw_curtis(big_n: usize) -> Vec<f64> {
    let n = big_n;
    let nf = n as f64;
    // cos(2 k theta_j) = cos(2 pi k j / N), looked up modulo N.
    let cosines: Vec<f64> = (0..n).map(|m| (2.0 * PI * m as f64 / nf).cos()).collect();
    let mut w = vec![0.0; n + 1];
    let mut v = vec![1.0; n.saturating_sub(1)];
    let top = if n.is_multiple_of(2) { n / 2 - 1 } else { (n - 1) / 2 };
    for k in 1..=top {
        let kf = k as f64;
        let scale = 2.0 / (4.0 * kf * kf - 1.0);
        for (idx, vi) in v.iter_mut().enumerate() {
            *vi -= scale * cosines[(k * (idx + 1)) % n];
        }
    }
    if n.is_multiple_of(2) {
        w[0] = 1.0 / (nf * nf - 1.0);
        for (idx, vi) in v.iter_mut().enumerate() {
            // cos(N theta_j) = (-1)^j
            let alt = if (idx + 1) % 2 == 0 { 1.0 } else { -1.0 };
            *vi -= alt / (nf * nf - 1.0);
        }
    } else {
        w[0] = 1.0 / (nf * nf);
    }
    w[n] = w[0];
    for (idx, vi) in v.iter().enumerate() {
        w[idx + 1] = 2.0 * vi / nf;
    }
    w.iter().map(|x| 0.5 * x).collect()
}

pub fn build_grid(n: usize) -> Result<Arc<ChebGrid>> {
    ChebGrid::new(n).map(Arc::new)
}

/// Complex point values on a shared grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<ChebGrid>,
    values: Vec<C64>,
}

impl ScalarField {
    pub fn new(grid: Arc<ChebGrid>, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(invalid(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.n()
            )));
        }
        if !crate::linalg::all_finite(&values) {
            return Err(invalid("field contains non-finite values"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<ChebGrid>) -> Self {
        let n = grid.n();
        Self {
            grid,
            values: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn from_fn(grid: Arc<ChebGrid>, f: impl Fn(f64) -> C64) -> Self {
        let values = grid.nodes().iter().map(|&y| f(y)).collect();
        Self { grid, values }
    }

    pub fn from_real_fn(grid: Arc<ChebGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |y| C64::new(f(y), 0.0))
    }

    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        crate::linalg::all_finite(&self.values)
    }
}

/// Norms used by the resolvent and space-time estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    L2,
    /// `‖(∂_y, k) f‖_{L²}`
    H1k(f64),
    /// Dual of `H¹_k` with Dirichlet test functions, via the Riesz representative.
    H1kDual(f64),
    Linf,
}

pub fn norm(field: &ScalarField, kind: NormKind) -> Result<f64> {
    let grid = field.grid();
    let f = field.values();
    if !field.is_finite() {
        return Err(invalid("norm of a non-finite field"));
    }
    match kind {
        NormKind::L2 => Ok(grid.l2(f)),
        NormKind::Linf => Ok(crate::linalg::max_abs(f)),
        NormKind::H1k(k) => {
            require_nonzero_k(k)?;
            Ok(grid.h1k(f, k))
        }
        NormKind::H1kDual(k) => {
            require_nonzero_k(k)?;
            let solver = DirichletHelmholtz::new(grid.clone(), k);
            Ok(solver.dual_norm(f))
        }
    }
}

fn require_nonzero_k(k: f64) -> Result<()> {
    if k == 0.0 || !k.is_finite() {
        return Err(invalid("k-dependent norm requires a finite nonzero wavenumber"));
    }
    Ok(())
}

/// Factorized `(∂_y² − k²)` with homogeneous Dirichlet rows at both walls.
pub struct DirichletHelmholtz {
    grid: Arc<ChebGrid>,
    k: f64,
    lu: RealLu,
}

impl DirichletHelmholtz {
    pub fn new(grid: Arc<ChebGrid>, k: f64) -> Self {
        Self::with_shift(grid, 1.0, -k * k, k)
    }

    /// Factorizes `alpha·∂_y² + beta` with Dirichlet rows; `k` is kept only
    /// for bookkeeping.
    pub fn with_shift(grid: Arc<ChebGrid>, alpha: f64, beta: f64, k: f64) -> Self {
        let n = grid.n();
        let last = n - 1;
        let d2 = grid.d2();
        let a = Mat::from_fn(n, n, |i, j| {
            if i == 0 || i == last {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else {
                alpha * d2[(i, j)] + if i == j { beta } else { 0.0 }
            }
        });
        Self {
            lu: RealLu::new(&a),
            grid,
            k,
        }
    }

    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Solves with wall values `left`, `right`; interior rows take `rhs`.
    pub fn solve_with_bc(&self, rhs: &[C64], left: C64, right: C64) -> Vec<C64> {
        let mut x = rhs.to_vec();
        x[0] = left;
        let last = x.len() - 1;
        x[last] = right;
        self.lu.solve_complex(&mut x);
        x
    }

    pub fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        let zero = C64::new(0.0, 0.0);
        self.solve_with_bc(rhs, zero, zero)
    }

    pub fn solve_real(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        x[0] = 0.0;
        let last = x.len() - 1;
        x[last] = 0.0;
        self.lu.solve_real(&mut x);
        x
    }

    /// Row `r` of `D1 P`, the wall slope of the Dirichlet solution as a
    /// functional of the interior data.
    pub fn slope_row(&self, r: usize) -> Vec<f64> {
        let d1 = self.grid.d1();
        let n = self.grid.n();
        let mut z: Vec<f64> = (0..n).map(|j| d1[(r, j)]).collect();
        self.lu.solve_transpose_real(&mut z);
        z[0] = 0.0;
        z[n - 1] = 0.0;
        z
    }

    /// Dense solution operator `P` with `P f` the Dirichlet solution for
    /// interior data `f`; wall entries of `f` are ignored.
    pub fn solution_matrix(&self) -> Mat<f64> {
        let n = self.grid.n();
        let last = n - 1;
        let mut p = Mat::from_fn(n, n, |i, j| {
            if i == j && j != 0 && j != last {
                1.0
            } else {
                0.0
            }
        });
        self.lu.solve_block(&mut p);
        p
    }

    /// `‖F‖_{H^{-1}_k}` through `−(∂_y² − k²) g = F`, `g(0) = g(1) = 0`.
    pub fn dual_norm(&self, f: &[C64]) -> f64 {
        let neg: Vec<C64> = f.iter().map(|z| -z).collect();
        let g = self.solve(&neg);
        self.grid.h1k(&g, self.k)
    }
}

/// Solves `(∂_y² − k²) ψ = rhs` with `ψ(0) = ψ(1) = 0`.
pub fn solve_helmholtz_dirichlet(grid: &Arc<ChebGrid>, k: f64, rhs: &ScalarField) -> Result<ScalarField> {
    if !k.is_finite() {
        return Err(invalid("wavenumber must be finite"));
    }
    if !rhs.is_finite() {
        return Err(invalid("right-hand side contains non-finite values"));
    }
    let solver = DirichletHelmholtz::new(grid.clone(), k);
    ScalarField::new(grid.clone(), solver.solve(rhs.values()))
}
