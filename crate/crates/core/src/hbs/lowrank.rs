use faer::{Mat, MatRef};

use crate::linalg::{matmul, qr_thin, svd_thin, svd_truncated, Tolerance};

/// A matrix held as `left * right` with `left: m x k`, `right: k x n`.
///
/// Factors produced by truncation have orthonormal `left` columns.
#[derive(Clone, Debug)]
pub struct LowRank {
    pub left: Mat<f64>,
    pub right: Mat<f64>,
}

/// One embedded low-rank term for [`LowRank::from_terms`]: `scale * left * right`
/// placed at `(row, col)`.
pub struct Term<'a> {
    pub row: usize,
    pub col: usize,
    pub left: MatRef<'a, f64>,
    pub right: MatRef<'a, f64>,
    pub scale: f64,
}

impl LowRank {
    pub fn new(left: Mat<f64>, right: Mat<f64>) -> Self {
        assert_eq!(left.ncols(), right.nrows(), "inner dimensions differ");
        Self { left, right }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::new(Mat::zeros(nrows, 0), Mat::zeros(0, ncols))
    }

    pub fn from_dense(a: MatRef<'_, f64>, tol: Tolerance) -> Self {
        let (u, s, v) = svd_truncated(a, tol);
        let right = Mat::from_fn(s.len(), a.ncols(), |i, j| s[i] * v[(j, i)]);
        Self::new(u, right)
    }

    pub fn nrows(&self) -> usize {
        self.left.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.right.ncols()
    }

    pub fn rank(&self) -> usize {
        self.left.ncols()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        matmul(self.left.as_ref(), self.right.as_ref())
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.right.transpose().to_owned(), self.left.transpose().to_owned())
    }

    pub fn scaled(mut self, alpha: f64) -> Self {
        self.right *= faer::Scale(alpha);
        self
    }

    /// `self * x`.
    pub fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        matmul(self.left.as_ref(), matmul(self.right.as_ref(), x).as_ref())
    }

    pub fn rows(&self, start: usize, len: usize) -> Self {
        Self::new(self.left.subrows(start, len).to_owned(), self.right.clone())
    }

    pub fn cols(&self, start: usize, len: usize) -> Self {
        Self::new(self.left.clone(), self.right.subcols(start, len).to_owned())
    }

    /// Re-truncate to the smallest rank meeting `tol`.
    pub fn recompressed(&self, tol: Tolerance) -> Self {
        if self.rank() == 0 {
            return self.clone();
        }
        let (q1, r1) = qr_thin(self.left.as_ref());
        let (q2, r2) = qr_thin(self.right.transpose());
        let core = matmul(r1.as_ref(), r2.transpose());
        let (w, s, z) = svd_thin(core.as_ref());
        let r = tol.rank(&s);
        let left = matmul(q1.as_ref(), w.subcols(0, r));
        let mut zr = z.subcols(0, r).to_owned();
        for j in 0..r {
            for i in 0..zr.nrows() {
                zr[(i, j)] *= s[j];
            }
        }
        let right = matmul(zr.transpose(), q2.transpose());
        Self::new(left, right)
    }

    /// Sum of embedded low-rank terms as one `nrows x ncols` factorization,
    /// recompressed at `tol`.
    pub fn from_terms(nrows: usize, ncols: usize, terms: &[Term<'_>], tol: Tolerance) -> Self {
        let k: usize = terms.iter().map(|t| t.left.ncols()).sum();
        let mut left = Mat::zeros(nrows, k);
        let mut right = Mat::zeros(k, ncols);
        let mut at = 0;
        for t in terms {
            let r = t.left.ncols();
            assert_eq!(t.right.nrows(), r);
            left.as_mut()
                .submatrix_mut(t.row, at, t.left.nrows(), r)
                .copy_from(t.left);
            let mut dst = right.as_mut().submatrix_mut(at, t.col, r, t.right.ncols());
            dst.copy_from(t.right);
            if t.scale != 1.0 {
                dst *= faer::Scale(t.scale);
            }
            at += r;
        }
        Self::new(left, right).recompressed(tol)
    }

    pub fn payload_len(&self) -> usize {
        self.left.nrows() * self.left.ncols() + self.right.nrows() * self.right.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_err;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn recompression_keeps_product_and_drops_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(30, 2, &mut rng);
        let b = random(2, 25, &mut rng);
        // Duplicate the same rank-2 term twice: the sum has rank 2.
        let lr = LowRank::new(
            crate::linalg::hstack(&[a.as_ref(), a.as_ref()]),
            crate::linalg::vstack(&[b.as_ref(), b.as_ref()]),
        );
        let c = lr.recompressed(Tolerance::relative(1e-12));
        assert_eq!(c.rank(), 2);
        let want = &a * &b * faer::Scale(2.0);
        assert!(rel_err(c.to_dense().as_ref(), want.as_ref()) < 1e-13);
        let gram = c.left.transpose() * &c.left;
        assert!(rel_err(gram.as_ref(), Mat::<f64>::identity(2, 2).as_ref()) < 1e-13);
    }

    #[test]
    fn embedded_terms_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l1 = random(3, 1, &mut rng);
        let r1 = random(1, 4, &mut rng);
        let l2 = random(2, 2, &mut rng);
        let r2 = random(2, 3, &mut rng);
        let lr = LowRank::from_terms(
            6,
            7,
            &[
                Term { row: 0, col: 1, left: l1.as_ref(), right: r1.as_ref(), scale: 1.0 },
                Term { row: 4, col: 4, left: l2.as_ref(), right: r2.as_ref(), scale: -2.0 },
            ],
            Tolerance::relative(1e-14),
        );
        let mut want = Mat::<f64>::zeros(6, 7);
        want.as_mut().submatrix_mut(0, 1, 3, 4).copy_from(&l1 * &r1);
        want.as_mut()
            .submatrix_mut(4, 4, 2, 3)
            .copy_from(&l2 * &r2 * faer::Scale(-2.0));
        assert!(rel_err(lr.to_dense().as_ref(), want.as_ref()) < 1e-13);
    }
}
