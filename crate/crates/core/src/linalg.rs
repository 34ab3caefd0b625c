//! Small dense helpers on top of faer: checked LU, truncated SVD, thin QR,
//! stacking and products.

use faer::linalg::solvers::{DenseSolveCore, PartialPivLu, Solve};
use faer::{Accum, Mat, MatMut, MatRef, Par};

use crate::error::{Error, Result};

/// Truncation rule for singular values: keep `s_i > max(rel * s_0, abs)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Self { rel, abs: 0.0 }
    }

    pub fn with_floor(self, abs: f64) -> Self {
        Self { abs, ..self }
    }

    pub fn rank(&self, s: &[f64]) -> usize {
        match s.first() {
            None => 0,
            Some(&s0) if !(s0 > self.abs) => 0,
            Some(&s0) => {
                let cut = (self.rel * s0).max(self.abs);
                s.iter().take_while(|&&v| v > cut).count()
            }
        }
    }
}

/// Relative size of the smallest LU pivot below which a matrix is treated as
/// singular, per unit of dimension.
const PIVOT_RATIO_FLOOR: f64 = f64::EPSILON;

pub struct Lu {
    lu: PartialPivLu<f64>,
    dim: usize,
    pivot_ratio: f64,
}

impl Lu {
    pub fn factor(a: MatRef<'_, f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "LU of a non-square matrix");
        let lu = a.partial_piv_lu();
        let diag = lu.U().diagonal();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..a.nrows() {
            let v = diag[i].abs();
            if !v.is_finite() {
                lo = f64::NAN;
                break;
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let pivot_ratio = if a.nrows() == 0 {
            1.0
        } else if hi == 0.0 {
            0.0
        } else {
            lo / hi
        };
        Self {
            lu,
            dim: a.nrows(),
            pivot_ratio,
        }
    }

    /// Factor and reject singular or non-finite matrices. `what` and
    /// `location` are only evaluated on failure.
    pub fn factor_checked(
        a: MatRef<'_, f64>,
        describe: impl FnOnce() -> (String, String),
    ) -> Result<Self> {
        let lu = Self::factor(a);
        if lu.is_singular() {
            let (what, location) = describe();
            return Err(Error::Singular {
                what,
                location,
                pivot_ratio: lu.pivot_ratio,
            });
        }
        Ok(lu)
    }

    pub fn is_singular(&self) -> bool {
        !(self.pivot_ratio > PIVOT_RATIO_FLOOR * self.dim.max(1) as f64)
    }

    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        if self.dim == 0 {
            return Mat::zeros(0, b.ncols());
        }
        self.lu.solve(b)
    }

    pub fn solve_transpose(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        if self.dim == 0 {
            return Mat::zeros(0, b.ncols());
        }
        self.lu.solve_transpose(b)
    }

    pub fn inverse(&self) -> Mat<f64> {
        if self.dim == 0 {
            return Mat::zeros(0, 0);
        }
        self.lu.inverse()
    }
}

/// Thin SVD truncated by `tol`: returns `(U_r, s_r, V_r)` with `A ~ U_r diag(s_r) V_r^T`.
pub fn svd_truncated(a: MatRef<'_, f64>, tol: Tolerance) -> (Mat<f64>, Vec<f64>, Mat<f64>) {
    let (u, s, v) = svd_thin(a);
    let r = tol.rank(&s);
    (
        u.subcols(0, r).to_owned(),
        s[..r].to_vec(),
        v.subcols(0, r).to_owned(),
    )
}

/// Thin SVD with singular values in descending order.
pub fn svd_thin(a: MatRef<'_, f64>) -> (Mat<f64>, Vec<f64>, Mat<f64>) {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return (Mat::zeros(a.nrows(), 0), Vec::new(), Mat::zeros(a.ncols(), 0));
    }
    let svd = a
        .thin_svd()
        .expect("SVD failed to converge; input must be finite");
    let s: Vec<f64> = (0..k).map(|i| svd.S().column_vector()[i]).collect();
    (svd.U().to_owned(), s, svd.V().to_owned())
}

/// Thin QR: `A = Q R` with `Q` of size `m x min(m, n)`.
pub fn qr_thin(a: MatRef<'_, f64>) -> (Mat<f64>, Mat<f64>) {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return (Mat::zeros(a.nrows(), 0), Mat::zeros(0, a.ncols()));
    }
    let qr = a.qr();
    (qr.compute_thin_Q(), qr.thin_R().to_owned())
}

pub fn matmul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut c = Mat::zeros(a.nrows(), b.ncols());
    gemm(c.as_mut(), 1.0, a, b);
    c
}

/// `dst += alpha * a * b`.
pub fn gemm(dst: MatMut<'_, f64>, alpha: f64, a: MatRef<'_, f64>, b: MatRef<'_, f64>) {
    assert_eq!(a.ncols(), b.nrows());
    if a.ncols() == 0 || dst.nrows() == 0 || dst.ncols() == 0 {
        return;
    }
    faer::linalg::matmul::matmul(dst, Accum::Add, a, b, alpha, Par::Seq);
}

/// `a * b * c`, multiplying in the cheaper order.
pub fn matmul3(a: MatRef<'_, f64>, b: MatRef<'_, f64>, c: MatRef<'_, f64>) -> Mat<f64> {
    let left = a.nrows() * a.ncols() * b.ncols() + a.nrows() * b.ncols() * c.ncols();
    let right = b.nrows() * b.ncols() * c.ncols() + a.nrows() * a.ncols() * c.ncols();
    if left <= right {
        matmul(matmul(a, b).as_ref(), c)
    } else {
        matmul(a, matmul(b, c).as_ref())
    }
}

pub fn block_diag(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.as_mut()
        .submatrix_mut(0, 0, a.nrows(), a.ncols())
        .copy_from(a);
    out.as_mut()
        .submatrix_mut(a.nrows(), a.ncols(), b.nrows(), b.ncols())
        .copy_from(b);
    out
}

pub fn vstack(blocks: &[MatRef<'_, f64>]) -> Mat<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols);
        out.as_mut().submatrix_mut(r, 0, b.nrows(), cols).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[MatRef<'_, f64>]) -> Mat<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows);
        out.as_mut().submatrix_mut(0, c, rows, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn fro(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

/// `||a - b||_F / ||b||_F` (absolute error when `b` is zero).
pub fn rel_err(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let diff = a - b;
    let nb = b.norm_l2();
    let nd = diff.norm_l2();
    if nb == 0.0 {
        nd
    } else {
        nd / nb
    }
}

pub fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn to_vec(a: MatRef<'_, f64>) -> Vec<f64> {
    assert_eq!(a.ncols(), 1);
    (0..a.nrows()).map(|i| a[(i, 0)]).collect()
}

pub fn is_finite(a: MatRef<'_, f64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].is_finite()))
}

/// Rows in reverse order.
pub fn reversed_rows(a: MatRef<'_, f64>) -> Mat<f64> {
    a.reverse_rows().to_owned()
}

/// `diag(d) * a`.
pub fn scale_rows(a: MatRef<'_, f64>, d: &[f64]) -> Mat<f64> {
    assert_eq!(a.nrows(), d.len());
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| d[i] * a[(i, j)])
}

/// `a * diag(d)`.
pub fn scale_cols(a: MatRef<'_, f64>, d: &[f64]) -> Mat<f64> {
    assert_eq!(a.ncols(), d.len());
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[j])
}
