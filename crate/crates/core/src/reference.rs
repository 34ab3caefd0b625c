//! Independent full-system solves used as accuracy oracles.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::sparse::SparseColMat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::Operator;
use crate::linalg::col;
use crate::solution::SolutionOperator;

/// Required relative residual of a full solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backend {
    /// Sparse LU with fill-reducing ordering.
    Direct,
    /// Unpreconditioned restarted GMRES.
    Gmres { restart: usize, tol: f64, max_iter: usize },
}

impl Backend {
    pub fn gmres() -> Self {
        Backend::Gmres {
            restart: 50,
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||A x - rhs|| / ||rhs||`.
pub fn relative_residual(op: &Operator, x: &[f64], rhs: &[f64]) -> f64 {
    let ax = op.apply(x);
    let r: Vec<f64> = ax.iter().zip(rhs).map(|(a, b)| a - b).collect();
    let nb = norm(rhs);
    if nb == 0.0 {
        norm(&r)
    } else {
        norm(&r) / nb
    }
}

/// `||A||_inf`.
pub fn operator_norm_inf(op: &Operator) -> f64 {
    (0..op.len())
        .map(|k| {
            let row = op.row(k);
            row.diagonal.abs() + row.entries.iter().map(|(_, c)| c.abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Residual accepted for `x`: [`RESIDUAL_TOLERANCE`], or a small multiple
/// of the rounding floor `eps ||A|| ||x|| / ||rhs||` when that is larger.
/// Near resonance even the correctly rounded solution sits above 1e-10.
pub fn acceptable_residual(op: &Operator, x: &[f64], rhs: &[f64]) -> f64 {
    let nb = norm(rhs);
    if nb == 0.0 {
        return RESIDUAL_TOLERANCE;
    }
    let floor = 16.0 * f64::EPSILON * operator_norm_inf(op) * norm(x) / nb;
    RESIDUAL_TOLERANCE.max(floor)
}

/// Solve `A x = rhs` over all unknowns.
pub fn full_solve(op: &Operator, rhs: &[f64], backend: Backend) -> Result<Vec<f64>> {
    if rhs.len() != op.len() {
        return Err(Error::DimensionMismatch {
            expected: op.len(),
            got: rhs.len(),
        });
    }
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; rhs.len()]);
    }
    let (x, iterations) = match backend {
        Backend::Direct => (direct(op, rhs)?, 1),
        Backend::Gmres { restart, tol, max_iter } => gmres(op, rhs, restart, tol, max_iter),
    };
    let residual = relative_residual(op, &x, rhs);
    if !(residual <= acceptable_residual(op, &x, rhs)) {
        return Err(Error::NotConverged { residual, iterations });
    }
    Ok(x)
}

fn direct(op: &Operator, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = op.len();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &op.triplets())
        .map_err(|e| Error::InvalidArgument(format!("sparse assembly failed: {e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::Singular {
        what: "full system matrix".into(),
        location: format!("sparse LU ({e:?})"),
        pivot_ratio: 0.0,
    })?;
    let x = lu.solve(col(rhs).as_ref());
    let mut x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    // Iterative refinement: nearly resonant systems leave a residual well
    // above roundoff after one solve.
    for _ in 0..REFINEMENT_STEPS {
        if relative_residual(op, &x, rhs) <= 0.01 * acceptable_residual(op, &x, rhs) {
            break;
        }
        let ax = op.apply(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = lu.solve(col(&r).as_ref());
        x.iter_mut().enumerate().for_each(|(i, xi)| *xi += dx[(i, 0)]);
    }
    Ok(x)
}

const REFINEMENT_STEPS: usize = 5;

/// GMRES(m) with modified Gram-Schmidt and Givens rotations. Returns the
/// iterate and the number of inner iterations spent.
fn gmres(op: &Operator, b: &[f64], m: usize, tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut total = 0;
    while total < max_iter {
        let ax = op.apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta <= tol * bnorm {
            break;
        }
        let mut basis = vec![r.iter().map(|v| v / beta).collect::<Vec<_>>()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && total < max_iter {
            let mut w = op.apply(&basis[k]);
            for (i, v) in basis.iter().enumerate() {
                let hik: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                hess[i][k] = hik;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hik * vi);
            }
            let wn = norm(&w);
            hess[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            (cs[k], sn[k]) = if denom == 0.0 { (1.0, 0.0) } else { (hess[k][k] / denom, hess[k + 1][k] / denom) };
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k += 1;
            total += 1;
            if g[k].abs() <= tol * bnorm || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| hess[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[j]).for_each(|(xi, vi)| *xi += yj * vi);
        }
        if g[k].abs() <= tol * bnorm {
            break;
        }
    }
    (x, total)
}

/// `(A^{-1} r_hat)|_boundary` where `r_hat` equals `r` on the root boundary
/// and vanishes elsewhere.
pub fn boundary_response(op: &Operator, boundary: &[usize], r: &[f64], backend: Backend) -> Result<Vec<f64>> {
    if r.len() != boundary.len() {
        return Err(Error::DimensionMismatch {
            expected: boundary.len(),
            got: r.len(),
        });
    }
    let mut rhs = vec![0.0; op.len()];
    for (&k, &v) in boundary.iter().zip(r) {
        rhs[k] = v;
    }
    let x = full_solve(op, &rhs, backend)?;
    Ok(boundary.iter().map(|&k| x[k]).collect())
}

/// Unit vector of random direction.
pub fn random_unit(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = norm(&v);
    v.into_iter().map(|x| x / nv).collect()
}

/// `sin(2 pi t)` over normalized perimeter position, unit-normalized.
pub fn smooth_unit(len: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|k| (2.0 * PI * k as f64 / len as f64).sin()).collect();
    let nv = norm(&v);
    if nv == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / nv).collect()
}

pub fn relative_l2(approx: &[f64], exact: &[f64]) -> f64 {
    let d: Vec<f64> = approx.iter().zip(exact).map(|(a, b)| a - b).collect();
    let ne = norm(exact);
    if ne == 0.0 {
        norm(&d)
    } else {
        norm(&d) / ne
    }
}

/// Relative errors `(e1, e2)` of `G r` for a random and a smooth unit `r`.
pub fn error_metrics(sol: &SolutionOperator, op: &Operator, seed: u64) -> Result<(f64, f64)> {
    let len = sol.boundary_len();
    let mut out = [0.0; 2];
    for (slot, r) in [random_unit(len, seed), smooth_unit(len)].into_iter().enumerate() {
        let approx = sol.apply_dtn(&r)?;
        let exact = boundary_response(op, &sol.boundary, &r, Backend::Direct)?;
        out[slot] = relative_l2(&approx, &exact);
    }
    Ok((out[0], out[1]))
}
