mod common;

use common::{body_load_error, boundary_of_full_solve, clustered_loads, compressed_options, rel_l2, TEST_NLEAF};
use hbs_nd::bodyload::{build_body_operator, BodyLoadSet};
use hbs_nd::grid::{build_tree, discretize};
use hbs_nd::problems::catalog;
use hbs_nd::solution::{BuildOptions, Engine};

#[test]
fn center_load_column_matches_full_solve() {
    let op = discretize(&catalog("laplace", 32, 0).unwrap()).unwrap();
    let tree = build_tree(op.side(), TEST_NLEAF).unwrap();
    let loads = BodyLoadSet::new(32, &[(16, 16)]).unwrap();
    let sol = build_body_operator(&op, &tree, &loads, Engine::Dense, &BuildOptions::default()).unwrap();
    let g = vec![0.0; sol.boundary_len()];
    let column = sol.solve_with_load(&g, &[1.0]).unwrap();
    let mut rhs = vec![0.0; op.len()];
    rhs[loads.nodes()[0]] = 1.0;
    let want = boundary_of_full_solve(&op, &rhs, &sol.boundary);
    let err = rel_l2(&column, &want);
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn clustered_loads_on_random_media() {
    let op = discretize(&catalog("random1", 64, 0).unwrap()).unwrap();
    let tree = build_tree(op.side(), TEST_NLEAF).unwrap();
    let loads = clustered_loads(64, 10, 7);
    for engine in [Engine::Dense, Engine::Accelerated] {
        let sol = build_body_operator(&op, &tree, &loads, engine, &compressed_options(1e-7)).unwrap();
        let err = body_load_error(&sol, &op, &loads, 11);
        assert!(err <= 1e-5, "{engine}: {err:e}");
    }
}

#[test]
fn response_is_linear_in_g_and_f() {
    let op = discretize(&catalog("diffconv1", 32, 0).unwrap()).unwrap();
    let tree = build_tree(op.side(), TEST_NLEAF).unwrap();
    let loads = clustered_loads(32, 5, 1);
    let sol = build_body_operator(&op, &tree, &loads, Engine::Accelerated, &compressed_options(1e-7)).unwrap();
    let nb = sol.boundary_len();
    let g1: Vec<f64> = (0..nb).map(|i| (i as f64 * 0.3).sin()).collect();
    let g2: Vec<f64> = (0..nb).map(|i| (i as f64 * 0.7).cos()).collect();
    let f1 = [1.0, -2.0, 0.5, 0.0, 3.0];
    let f2 = [0.2, 0.1, -1.0, 4.0, 0.0];
    let (a, b) = (1.7, -0.4);
    let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect::<Vec<_>>();
    let lhs = sol.solve_with_load(&mix(&g1, &g2), &mix(&f1, &f2)).unwrap();
    let rhs = mix(&sol.solve_with_load(&g1, &f1).unwrap(), &sol.solve_with_load(&g2, &f2).unwrap());
    assert!(rel_l2(&lhs, &rhs) <= 1e-12);
}

#[test]
fn zero_load_reduces_to_g() {
    let op = discretize(&catalog("helmholtz1", 32, 0).unwrap()).unwrap();
    let tree = build_tree(op.side(), TEST_NLEAF).unwrap();
    let loads = clustered_loads(32, 4, 2);
    let sol = build_body_operator(&op, &tree, &loads, Engine::Accelerated, &compressed_options(1e-7)).unwrap();
    let g: Vec<f64> = (0..sol.boundary_len()).map(|i| 1.0 + (i as f64).sqrt()).collect();
    let with_zero = sol.solve_with_load(&g, &[0.0; 4]).unwrap();
    assert!(rel_l2(&with_zero, &sol.apply_dtn(&g).unwrap()) <= 1e-14);
}

#[test]
fn empty_load_set_is_the_plain_operator() {
    let op = discretize(&catalog("laplace", 32, 0).unwrap()).unwrap();
    let tree = build_tree(op.side(), TEST_NLEAF).unwrap();
    let sol = build_body_operator(&op, &tree, &BodyLoadSet::empty(), Engine::Dense, &BuildOptions::default()).unwrap();
    let g = vec![1.0; sol.boundary_len()];
    let v = sol.solve_with_load(&g, &[]).unwrap();
    assert!(rel_l2(&v, &sol.apply_dtn(&g).unwrap()) <= 1e-14);
    assert!(sol.solve_with_load(&g, &[1.0]).is_err());
}

#[test]
fn loads_on_the_boundary_ring_are_rejected() {
    assert!(BodyLoadSet::new(32, &[(1, 5)]).is_err());
    assert!(BodyLoadSet::new(32, &[(5, 5), (5, 5)]).is_err());
}
