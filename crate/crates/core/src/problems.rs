//! Named benchmark problems.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Coefficient, Conductivities, Mode, ProblemSpec};

pub const NAMES: [&str; 11] = [
    "laplace",
    "diffconv1",
    "diffconv2",
    "diffconv3",
    "diffconv4",
    "helmholtz1",
    "helmholtz2",
    "helmholtz3",
    "helmholtz4",
    "random1",
    "random2",
];

/// Shift away from the tenth Laplace eigenvalue used by `helmholtz3`.
pub const RESONANCE_SHIFT: f64 = 1e-5;

pub fn catalog(name: &str, n: usize, seed: u64) -> Result<ProblemSpec> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 4 points per side, got {n}"
        )));
    }
    let zero = Coefficient::zero;
    let k = Coefficient::Constant;
    let continuum = |b, c, d| ProblemSpec {
        name: name.to_string(),
        n,
        mode: Mode::Continuum { b, c, d },
        seed,
    };
    let network = |lo, hi| ProblemSpec {
        name: name.to_string(),
        n,
        mode: Mode::Network(Conductivities::random(n, lo, hi, seed)),
        seed,
    };
    let spec = match name {
        "laplace" => continuum(zero(), zero(), zero()),
        "diffconv1" => continuum(k(100.0), zero(), zero()),
        "diffconv2" => continuum(k(1000.0), zero(), zero()),
        "diffconv3" => continuum(
            Coefficient::field(|_, y| 125.0 * (4.0 * PI * y).cos()),
            Coefficient::field(|x, _| 125.0 * (4.0 * PI * x).sin()),
            zero(),
        ),
        "diffconv4" => continuum(
            Coefficient::field(|x, _| 125.0 * (4.0 * PI * x).cos()),
            Coefficient::field(|_, y| 125.0 * (4.0 * PI * y).sin()),
            zero(),
        ),
        "helmholtz1" => continuum(zero(), zero(), k(-100.0)),
        "helmholtz2" => continuum(zero(), zero(), k(-4005.0)),
        "helmholtz3" => {
            let lambda = nth_eigenvalue(n, 10)?;
            continuum(zero(), zero(), k(-lambda + RESONANCE_SHIFT))
        }
        "helmholtz4" => {
            let kappa = 2.0 * PI * n as f64 / 40.0;
            continuum(zero(), zero(), k(-kappa * kappa))
        }
        "random1" => network(1.0, 2.0),
        "random2" => network(1.0, 1000.0),
        _ => return Err(Error::UnknownProblem(name.to_string())),
    };
    Ok(spec)
}

/// Eigenvalue `(p, q)` of the assembled Laplacian on an `n x n` grid,
/// `1 <= p, q <= n - 2`.
pub fn discrete_eigenvalue(p: usize, q: usize, n: usize) -> Result<f64> {
    if n < 4 || !(1..=n - 2).contains(&p) || !(1..=n - 2).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue index ({p}, {q}) out of range for n = {n}"
        )));
    }
    let h = 1.0 / (n as f64 - 1.0);
    let t = PI / (n as f64 - 1.0);
    Ok((4.0 - 2.0 * (p as f64 * t).cos() - 2.0 * (q as f64 * t).cos()) / (h * h))
}

/// All eigenvalues with their indices, ascending, ties broken by `(p, q)`.
pub fn sorted_eigenvalues(n: usize) -> Result<Vec<(f64, usize, usize)>> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("n = {n} is below 4")));
    }
    let mut all = Vec::with_capacity((n - 2) * (n - 2));
    for p in 1..=n - 2 {
        for q in 1..=n - 2 {
            all.push((discrete_eigenvalue(p, q, n)?, p, q));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    Ok(all)
}

/// The `k`-th smallest eigenvalue (1-based, counting multiplicity).
pub fn nth_eigenvalue(n: usize, k: usize) -> Result<f64> {
    let all = sorted_eigenvalues(n)?;
    if k == 0 || k > all.len() {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue rank {k} out of range for n = {n}"
        )));
    }
    Ok(all[k - 1].0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_builds() {
        for name in NAMES {
            let spec = catalog(name, 12, 3).unwrap();
            assert_eq!(spec.name, name);
            crate::grid::discretize(&spec).unwrap();
        }
        assert!(matches!(catalog("poisson", 12, 0), Err(Error::UnknownProblem(_))));
    }

    #[test]
    fn helmholtz4_coefficient() {
        let spec = catalog("helmholtz4", 256, 0).unwrap();
        let Mode::Continuum { d, .. } = spec.mode else { panic!() };
        let v = d.eval(0.3, 0.3);
        assert!((v - (-1617.0)).abs() < 1.0, "{v}");
        let want = -(2.0 * PI * 256.0 / 40.0f64).powi(2);
        assert_eq!(v, want);
    }

    #[test]
    fn random_fields_are_seeded_and_in_range() {
        let a = catalog("random1", 20, 9).unwrap();
        let b = catalog("random1", 20, 9).unwrap();
        let c = catalog("random1", 20, 10).unwrap();
        let (Mode::Network(ca), Mode::Network(cb), Mode::Network(cc)) = (a.mode, b.mode, c.mode)
        else {
            panic!()
        };
        assert_eq!(ca, cb);
        assert_ne!(ca, cc);
        assert!(ca.horizontal.iter().chain(&ca.vertical).all(|&g| (1.0..=2.0).contains(&g)));
        let Mode::Network(r2) = catalog("random2", 20, 1).unwrap().mode else { panic!() };
        assert!(r2.horizontal.iter().all(|&g| (1.0..=1000.0).contains(&g)));
    }

    #[test]
    fn eigenvalue_conventions() {
        let h = 0.25;
        let want = (4.0 - 4.0 * (PI / 4.0).cos()) / (h * h);
        assert!((discrete_eigenvalue(1, 1, 5).unwrap() - want).abs() < 1e-12);
        assert_eq!(
            discrete_eigenvalue(2, 5, 9).unwrap(),
            discrete_eigenvalue(5, 2, 9).unwrap()
        );
        assert!(discrete_eigenvalue(0, 1, 9).is_err());
        assert!(discrete_eigenvalue(8, 1, 9).is_err());
        // Tenth entry with multiplicity: (1,1) (1,2) (2,1) (2,2) (1,3) (3,1) (2,3) (3,2) (1,4) (4,1).
        let all = sorted_eigenvalues(40).unwrap();
        assert_eq!((all[8].1, all[8].2), (1, 4));
        assert_eq!((all[9].1, all[9].2), (4, 1));
    }
}
