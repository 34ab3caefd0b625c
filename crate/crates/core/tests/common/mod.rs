//! Oracles shared by the integration tests and the acceptance report. They
//! avoid the library's own elimination code: Schur complements and solves
//! come straight from the assembled matrix.
#![allow(dead_code)]

use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hbs_nd::accel_nd::build_root_accel;
use hbs_nd::dense_nd::build_root_dense;
use hbs_nd::grid::{build_tree, discretize, BoxGeom, Operator};
use hbs_nd::hbs::{HbsMatrix, IndexTree};
use hbs_nd::hbs_ops::{add_hbs, invert_bs_onelevel, invert_hbs, lowrank_to_bs, BlockSeparable};
use hbs_nd::linalg::{qr_thin, svd_thin, Tolerance};
use hbs_nd::problems::catalog;
use hbs_nd::solution::{BuildOptions, SolutionOperator};
use hbs_nd::bodyload::BodyLoadSet;

pub fn rel_fro(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (a - b).norm_l2() / b.norm_l2()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n
}

pub fn dense_operator(op: &Operator) -> Mat<f64> {
    let mut a = Mat::zeros(op.len(), op.len());
    for t in op.triplets() {
        a[(t.row, t.col)] += t.val;
    }
    a
}

/// Root boundary unknowns in perimeter order.
pub fn root_boundary(op: &Operator) -> Vec<usize> {
    let side = op.side();
    BoxGeom::new(0, 0, side, side).perimeter(side)
}

/// `A_bb - A_bi A_ii^{-1} A_ib` from the assembled matrix.
pub fn brute_schur(op: &Operator, boundary: &[usize]) -> Mat<f64> {
    let a = dense_operator(op);
    let mut on_boundary = vec![false; op.len()];
    boundary.iter().for_each(|&k| on_boundary[k] = true);
    let interior: Vec<usize> = (0..op.len()).filter(|&k| !on_boundary[k]).collect();
    let pick = |rows: &[usize], cols: &[usize]| Mat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])]);
    let a_bb = pick(boundary, boundary);
    if interior.is_empty() {
        return a_bb;
    }
    let a_ii = pick(&interior, &interior);
    let a_ib = pick(&interior, boundary);
    let a_bi = pick(boundary, &interior);
    let x = a_ii.partial_piv_lu().solve(&a_ib);
    a_bb - a_bi * x
}

pub fn dense_inverse(a: &Mat<f64>) -> Mat<f64> {
    a.partial_piv_lu().solve(Mat::<f64>::identity(a.nrows(), a.ncols()))
}

/// Build settings for the compressed tier: crossover 32, 8x8 leaf boxes.
pub const TEST_NLEAF: usize = 64;

pub fn compressed_options(epsilon: f64) -> BuildOptions {
    BuildOptions {
        tolerance: epsilon,
        crossover: 32,
        ..Default::default()
    }
}

/// Relative Frobenius gap between accelerated and dense `G`.
pub fn engine_gap(problem: &str, n: usize, epsilon: f64) -> hbs_nd::Result<f64> {
    let op = discretize(&catalog(problem, n, 0)?)?;
    let tree = build_tree(op.side(), TEST_NLEAF)?;
    let options = compressed_options(epsilon);
    let dense = build_root_dense(&op, &tree, None, &options)?;
    let accel = build_root_accel(&op, &tree, None, &options)?;
    Ok(rel_fro(&accel.dense_g(), &dense.dense_g()))
}

/// `(A^{-1} rhs)` restricted to `boundary`, by the sparse reference solver.
pub fn boundary_of_full_solve(op: &Operator, rhs: &[f64], boundary: &[usize]) -> Vec<f64> {
    let x = hbs_nd::reference::full_solve(op, rhs, hbs_nd::reference::Backend::Direct).expect("reference solve");
    boundary.iter().map(|&k| x[k]).collect()
}

/// Relative error of `G g + F f` against a full solve with `g` on the
/// boundary ring and `f` on the load nodes.
pub fn body_load_error(sol: &SolutionOperator, op: &Operator, loads: &BodyLoadSet, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<f64> = (0..sol.boundary_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f: Vec<f64> = (0..loads.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = sol.solve_with_load(&g, &f).expect("solve with load");
    let mut rhs = vec![0.0; op.len()];
    for (&k, &gk) in sol.boundary.iter().zip(&g) {
        rhs[k] = gk;
    }
    for (&k, &fk) in loads.nodes().iter().zip(&f) {
        rhs[k] += fk;
    }
    rel_l2(&v, &boundary_of_full_solve(op, &rhs, &sol.boundary))
}

/// `count` load nodes clustered around the middle of an `n x n` grid.
pub fn clustered_loads(n: usize, count: usize, seed: u64) -> BodyLoadSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, r) = (n / 2, (n / 8).max(3));
    let mut coords = Vec::with_capacity(count);
    while coords.len() < count {
        let ij = (rng.random_range(c - r..=c + r), rng.random_range(c - r..=c + r));
        if !coords.contains(&ij) {
            coords.push(ij);
        }
    }
    BodyLoadSet::new(n, &coords).expect("clustered loads are interior")
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------
// HBS algebra properties

pub fn random_mat(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

/// Nonsymmetric kernel matrix on sorted random points, diagonally shifted;
/// off-diagonal blocks are numerically low rank.
pub fn random_kernel(size: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let mut x: Vec<f64> = (0..size).map(|_| rng.random_range(0.0..1.0)).collect();
    x.sort_by(f64::total_cmp);
    let skew = rng.random_range(0.2..2.0);
    let shift = rng.random_range(2.0..6.0);
    Mat::from_fn(size, size, |i, j| {
        let d = x[i] - x[j];
        let v = 1.0 / (0.02 + d.abs()) * (1.0 + 0.5 * (skew * d).tanh());
        if i == j {
            v + shift * size as f64
        } else {
            v
        }
    })
}

/// Outcome of one property over all trials: largest observed value vs bound.
pub struct Property {
    pub name: &'static str,
    pub worst: f64,
    pub bound: String,
    pub pass: bool,
}

pub fn condition(a: &Mat<f64>) -> f64 {
    let s = svd_thin(a.as_ref()).1;
    s[0] / s[s.len() - 1]
}

fn levels(tree: &IndexTree) -> f64 {
    (tree.depth() + 1) as f64
}

/// Every HBS algebra property over `trials` seeded trials.
pub fn hbs_property_suite(trials: usize, seed: u64) -> Vec<Property> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps_choices = [1e-4, 1e-6, 1e-7, 1e-9, 1e-10];
    let mut ortho = 0.0f64;
    let mut roundtrip = 0.0f64; // error / (10 eps L)
    let mut apply = 0.0f64;
    let mut monotone = true;
    let mut woodbury = 0.0f64;
    let mut woodbury_cond = 0.0f64;
    let mut core_cond = 0.0f64;
    let mut addition = 0.0f64; // error / (10 eps)
    let mut commute = 0.0f64;
    let mut lowrank = 0.0f64;

    for _ in 0..trials {
        let size = rng.random_range(40..120);
        let leaf = rng.random_range(4..16);
        let tree = IndexTree::balanced(size, leaf);
        let eps = eps_choices[rng.random_range(0..eps_choices.len())];
        let tol = Tolerance::relative(eps);
        let h = random_kernel(size, &mut rng);
        let c = HbsMatrix::compress(h.as_ref(), &tree, tol);
        ortho = ortho.max(c.orthonormality_defect());
        let l = levels(&tree);
        roundtrip = roundtrip.max(rel_fro(&c.reconstruct(), &h) / (10.0 * eps * l));

        let x: Vec<f64> = (0..size).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = c.apply(&x).unwrap();
        let xm = Mat::from_fn(size, 1, |i, _| x[i]);
        let want = &h * &xm;
        let err: f64 = (0..size).map(|i| (y[i] - want[(i, 0)]).powi(2)).sum::<f64>().sqrt();
        let h2 = svd_thin(h.as_ref()).1[0];
        let xn = xm.norm_l2();
        apply = apply.max(err / (10.0 * eps * l * h2 * xn));

        let loose = HbsMatrix::compress(h.as_ref(), &tree, Tolerance::relative(1e-4));
        let strict = HbsMatrix::compress(h.as_ref(), &tree, Tolerance::relative(1e-9));
        monotone &= loose.ranks().iter().zip(strict.ranks()).all(|(a, b)| *a <= b);

        // One level: p blocks of size m, rank k. Orthonormal bases with V
        // close to U keep V^T D^-1 U well conditioned, and the coupling is
        // small against the diagonal.
        let (p, m, k) = (rng.random_range(2..6), rng.random_range(4..10), rng.random_range(1..4));
        let u: Vec<Mat<f64>> = (0..p).map(|_| qr_thin(random_mat(m, k, &mut rng).as_ref()).0).collect();
        let bs = BlockSeparable {
            d: (0..p)
                .map(|_| random_mat(m, m, &mut rng) + Mat::<f64>::identity(m, m) * faer::Scale(2.0 * m as f64))
                .collect(),
            u: u.clone(),
            v: u.iter().map(|ui| qr_thin((ui + random_mat(m, k, &mut rng) * faer::Scale(0.3)).as_ref()).0).collect(),
            ht: random_mat(p * k, p * k, &mut rng) * faer::Scale(1.0 / (p * k) as f64),
        };
        let dense = bs.to_dense();
        for i in 0..p {
            let dinv = dense_inverse(&bs.d[i]);
            let core = bs.v[i].transpose() * &dinv * &bs.u[i];
            core_cond = core_cond.max(condition(&core));
        }
        let inv = invert_bs_onelevel(&bs).unwrap().to_dense();
        let defect = &inv * &dense - Mat::<f64>::identity(p * m, p * m);
        woodbury = woodbury.max(defect.norm_max());
        woodbury_cond = woodbury_cond.max(condition(&dense));

        let h_b = random_kernel(size, &mut rng);
        let b = HbsMatrix::compress(h_b.transpose(), &tree, tol);
        let ab = add_hbs(&c, &b, tol).unwrap();
        let ba = add_hbs(&b, &c, tol).unwrap();
        let sum = c.reconstruct() + b.reconstruct();
        addition = addition.max(rel_fro(&ab.reconstruct(), &sum) / (10.0 * eps));
        commute = commute.max(rel_fro(&ab.reconstruct(), &ba.reconstruct()));

        let r = rng.random_range(0..5);
        let q = random_mat(size, r, &mut rng);
        let rr = random_mat(r, size, &mut rng);
        let lr = lowrank_to_bs(q.as_ref(), rr.as_ref(), &tree).unwrap();
        let want = &q * &rr;
        let err = if r == 0 { lr.reconstruct().norm_max() } else { rel_fro(&lr.reconstruct(), &want) };
        lowrank = lowrank.max(err);
    }

    let residual = inversion_residual(trials, &mut rng);
    let check = |name, worst: f64, limit: f64, bound: &str| Property {
        name,
        worst,
        bound: bound.to_string(),
        pass: worst <= limit,
    };
    vec![
        check("orthonormality", ortho, 1e-12, "max |U^T U - I| <= 1e-12"),
        check("roundtrip", roundtrip, 1.0, "rel err / (10 eps L) <= 1"),
        check("apply consistency", apply, 1.0, "err / (10 eps L |H| |x|) <= 1"),
        Property {
            name: "rank monotonicity",
            worst: if monotone { 0.0 } else { 1.0 },
            bound: "ranks(1e-4) <= ranks(1e-9) at every node".into(),
            pass: monotone,
        },
        check(
            "one-level Woodbury",
            woodbury,
            1e-9,
            &format!("max |H^-1 H - I| <= 1e-9, cond(H) <= {woodbury_cond:.1}, cond(V^T D^-1 U) <= {core_cond:.1e}"),
        ),
        check("multi-level inversion residual", residual, 1.0, "|S S^-1 x - x| / |x| / (100 eps) <= 1"),
        check("addition", addition, 1.0, "rel err / (10 eps) <= 1"),
        check("addition commutativity", commute, 1e-12, "rel diff <= 1e-12"),
        check("low-rank conversion", lowrank, 1e-12, "rel err <= 1e-12"),
    ]
}

/// Worst `|S (S^-1 x) - x| / |x| / (100 eps)` over random `x` for compressed
/// Laplace Schur complements at n = 32 and 64.
fn inversion_residual(trials: usize, rng: &mut ChaCha8Rng) -> f64 {
    let eps = 1e-7;
    let tol = Tolerance::relative(eps);
    let mut worst = 0.0f64;
    for n in [32, 64] {
        let op = discretize(&catalog("laplace", n, 0).unwrap()).unwrap();
        let s = brute_schur(&op, &root_boundary(&op));
        let tree = IndexTree::balanced(s.nrows(), 16);
        let h = HbsMatrix::compress(s.as_ref(), &tree, tol);
        let inv = invert_hbs(&h).unwrap();
        for _ in 0..trials {
            let x: Vec<f64> = (0..s.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = h.apply(&inv.apply_inverse(&x).unwrap()).unwrap();
            worst = worst.max(rel_l2(&y, &x) / (100.0 * eps));
        }
    }
    worst
}
