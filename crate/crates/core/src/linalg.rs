//! Thin dense linear-algebra layer over `faer`.
//!
//! Fields are plain slices; matrices are column-major `faer::Mat`. Only the
//! handful of kernels the solvers need live here.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatMut};
use num_complex::Complex64;

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);

/// LU factorization of a real square matrix.
pub struct RealLu {
    lu: PartialPivLu<f64>,
    n: usize,
}

impl RealLu {
    pub fn new(a: &Mat<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        Self {
            lu: a.partial_piv_lu(),
            n: a.nrows(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_real(&self, rhs: &mut [f64]) {
        let n = self.n;
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(rhs, n, 1));
    }

    /// Solves for a complex right-hand side by splitting real and imaginary
    /// parts into two columns.
    pub fn solve_complex(&self, rhs: &mut [C64]) {
        let n = self.n;
        let mut buf = vec![0.0; 2 * n];
        for (i, z) in rhs.iter().enumerate() {
            buf[i] = z.re;
            buf[n + i] = z.im;
        }
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(&mut buf, n, 2));
        for (i, z) in rhs.iter_mut().enumerate() {
            *z = C64::new(buf[i], buf[n + i]);
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_real(&self, rhs: &mut [f64]) {
        let n = self.n;
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(rhs, n, 1));
    }

    /// Solves `A X = B` in place for a column-major block of right-hand sides.
    pub fn solve_block(&self, rhs: &mut Mat<f64>) {
        self.lu.solve_in_place(rhs.as_mut());
    }
}

/// LU factorization of a complex square matrix.
pub struct ComplexLu {
    lu: PartialPivLu<C64>,
    n: usize,
}

impl ComplexLu {
    pub fn new(a: &Mat<C64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        Self {
            lu: a.partial_piv_lu(),
            n: a.nrows(),
        }
    }

    pub fn solve(&self, rhs: &mut [C64]) {
        let n = self.n;
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(rhs, n, 1));
    }

    /// Solves for several right-hand sides stored back to back.
    pub fn solve_many(&self, rhs: &mut [C64], ncols: usize) {
        let n = self.n;
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(rhs, n, ncols));
    }
}

/// `out = A x` for real `A` and real `x`.
pub fn matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, &aij) in out.iter_mut().zip(a.col_as_slice(j)) {
            *o += aij * xj;
        }
    }
    out
}

/// `out = A x` for real `A` and complex `x`.
pub fn matvec_c(a: &Mat<f64>, x: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); a.nrows()];
    matvec_c_into(a, x, &mut out);
    out
}

pub fn matvec_c_into(a: &Mat<f64>, x: &[C64], out: &mut [C64]) {
    out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
    for (j, &xj) in x.iter().enumerate() {
        if xj.re == 0.0 && xj.im == 0.0 {
            continue;
        }
        for (o, &aij) in out.iter_mut().zip(a.col_as_slice(j)) {
            o.re += aij * xj.re;
            o.im += aij * xj.im;
        }
    }
}

/// Dot product of row `i` of a real matrix with a complex vector.
pub fn row_dot_c(a: &Mat<f64>, i: usize, x: &[C64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (j, &xj) in x.iter().enumerate() {
        acc += xj * a[(i, j)];
    }
    acc
}

pub fn row_dot(a: &Mat<f64>, i: usize, x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(j, &xj)| a[(i, j)] * xj).sum()
}

pub fn max_abs(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn all_finite(x: &[C64]) -> bool {
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
