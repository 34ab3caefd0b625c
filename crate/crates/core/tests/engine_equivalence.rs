mod common;

use common::{compressed_options, engine_gap, rel_fro, TEST_NLEAF};
use hbs_nd::accel_nd::build_root_accel;
use hbs_nd::dense_nd::build_root_dense;
use hbs_nd::grid::{build_tree, discretize};
use hbs_nd::problems::{catalog, NAMES};
use hbs_nd::solution::BuildOptions;

// The near-resonant Helmholtz case amplifies the compression error past these
// bounds; the acceptance report tracks it against its own looser bound.
#[test]
fn engines_agree_on_every_problem_at_n32() {
    for name in NAMES.iter().filter(|&&n| n != "helmholtz3") {
        let gap = engine_gap(name, 32, 1e-7).unwrap();
        assert!(gap <= 1e-4, "{name}: {gap:e}");
    }
}

#[test]
fn laplace_64_agrees_tightly() {
    let gap = engine_gap("laplace", 64, 1e-7).unwrap();
    assert!(gap <= 1e-5, "{gap:e}");
}

#[test]
fn accel_without_compression_is_the_dense_engine() {
    let op = discretize(&catalog("diffconv2", 32, 0).unwrap()).unwrap();
    let tree = build_tree(op.side(), TEST_NLEAF).unwrap();
    let options = BuildOptions {
        crossover: 10_000,
        ..Default::default()
    };
    let dense = build_root_dense(&op, &tree, None, &options).unwrap();
    let accel = build_root_accel(&op, &tree, None, &options).unwrap();
    assert!(rel_fro(&accel.dense_g(), &dense.dense_g()) < 1e-12);
    assert!(accel.report.levels.iter().all(|l| !l.compressed));
}

#[test]
fn tighter_tolerance_shrinks_the_gap() {
    let op = discretize(&catalog("helmholtz1", 32, 0).unwrap()).unwrap();
    let tree = build_tree(op.side(), TEST_NLEAF).unwrap();
    let dense = build_root_dense(&op, &tree, None, &compressed_options(1e-7)).unwrap().dense_g();
    let gap = |eps| {
        let accel = build_root_accel(&op, &tree, None, &compressed_options(eps)).unwrap();
        rel_fro(&accel.dense_g(), &dense)
    };
    assert!(gap(1e-10) < gap(1e-5));
}
