//! Nested dissection in dense arithmetic.

use std::time::Instant;

use faer::{Mat, MatRef};
use rayon::prelude::*;

use crate::bodyload::BodyLoadSet;
use crate::error::{Error, Result};
use crate::grid::{BoxGeom, BoxTree, IndexMap, Operator};
use crate::linalg::{gemm, matmul, vstack, Lu};
use crate::solution::{
    BuildOptions, BuildReport, Engine, LevelDiagnostics, RootOperator, SolutionOperator,
};

/// Leaves with more interior nodes than this are themselves dissected
/// before elimination; the result is the same Schur complement.
pub const DIRECT_INTERIOR_MAX: usize = 400;

/// Dense Schur complement of one box on its perimeter.
#[derive(Clone, Debug)]
pub struct SchurData {
    pub geom: BoxGeom,
    /// Perimeter unknowns, counterclockwise from the southwest corner.
    pub boundary: Vec<usize>,
    pub s: Mat<f64>,
    /// Boundary load, one column per body load.
    pub rhs: Option<Mat<f64>>,
}

impl SchurData {
    pub fn bytes(&self) -> usize {
        8 * (self.s.nrows() * self.s.ncols() + self.rhs.as_ref().map_or(0, |r| r.nrows() * r.ncols()))
    }
}

fn describe(geom: &BoxGeom) -> String {
    format!(
        "box [{}..{}) x [{}..{})",
        geom.x0,
        geom.x0 + geom.w,
        geom.y0,
        geom.y0 + geom.h
    )
}

/// Unit-load columns restricted to `ids`.
fn load_block(ids: &[usize], loads: &BodyLoadSet) -> Mat<f64> {
    let index = IndexMap::new(ids);
    let mut out = Mat::zeros(ids.len(), loads.len());
    for (j, &node) in loads.nodes().iter().enumerate() {
        if let Some(i) = index.get(node) {
            out[(i, j)] = 1.0;
        }
    }
    out
}

/// Eliminate the interior of a box: `S = A_bb - A_bi A_ii^{-1} A_ib`.
pub fn leaf_schur(geom: &BoxGeom, op: &Operator, loads: Option<&BodyLoadSet>) -> Result<SchurData> {
    let side = op.side();
    let interior = geom.interior(side);
    if interior.len() > DIRECT_INTERIOR_MAX && geom.w >= 4 && geom.h >= 4 {
        let [sw, se, nw, ne] = geom.quadrants();
        let kids = [sw, se, nw, ne].map(|g| leaf_schur(&g, op, loads));
        let [a, b, c, d] = kids;
        return merge_four([a?, b?, c?, d?], op, PairOrder::ColumnsFirst);
    }
    let boundary = geom.perimeter(side);
    let a_bb = op.dense_block(&boundary, &boundary);
    let rhs_b = loads.map(|l| load_block(&boundary, l));
    if interior.is_empty() {
        return Ok(SchurData {
            geom: *geom,
            boundary,
            s: a_bb,
            rhs: rhs_b,
        });
    }
    let a_ii = op.dense_block(&interior, &interior);
    let a_ib = op.dense_block(&interior, &boundary);
    let a_bi = op.dense_block(&boundary, &interior);
    let lu = Lu::factor_checked(a_ii.as_ref(), || ("interior block A_ii".into(), describe(geom)))?;
    let mut s = a_bb;
    gemm(s.as_mut(), -1.0, a_bi.as_ref(), lu.solve(a_ib.as_ref()).as_ref());
    let rhs = match (rhs_b, loads) {
        (Some(mut r), Some(l)) => {
            let f_i = load_block(&interior, l);
            gemm(r.as_mut(), -1.0, a_bi.as_ref(), lu.solve(f_i.as_ref()).as_ref());
            Some(r)
        }
        _ => None,
    };
    Ok(SchurData {
        geom: *geom,
        boundary,
        s,
        rhs,
    })
}

fn gather(m: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn gather_rows(m: MatRef<'_, f64>, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Split a child's boundary into nodes on the union perimeter (with their
/// union positions) and nodes interior to the union.
fn classify(child: &SchurData, union: &BoxGeom, op: &Operator) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (mut outer, mut outer_pos, mut inner) = (Vec::new(), Vec::new(), Vec::new());
    for (local, &node) in child.boundary.iter().enumerate() {
        let (p, q) = op.coords(node);
        match union.boundary_position(p, q) {
            Some(pos) => {
                outer.push(local);
                outer_pos.push(pos);
            }
            None => inner.push(local),
        }
    }
    (outer, outer_pos, inner)
}

/// Merge two boxes sharing an edge: eliminate the boundary nodes that become
/// interior to the union.
pub fn merge_two(a: &SchurData, b: &SchurData, op: &Operator) -> Result<SchurData> {
    let union = a.geom.union(&b.geom).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{} and {} do not share a full edge",
            describe(&a.geom),
            describe(&b.geom)
        ))
    })?;
    let (o1, pos1, i3) = classify(a, &union, op);
    let (o2, pos2, i4) = classify(b, &union, op);
    let ids = |d: &SchurData, local: &[usize]| -> Vec<usize> { local.iter().map(|&i| d.boundary[i]).collect() };
    let (p1, p2, p3, p4) = (ids(a, &o1), ids(b, &o2), ids(a, &i3), ids(b, &i4));
    let (n1, n2, n3, n4) = (p1.len(), p2.len(), p3.len(), p4.len());
    let outer_len = n1 + n2;
    let inner_len = n3 + n4;

    // [S11 A12; A21 S22]
    let mut top = Mat::zeros(outer_len, outer_len);
    top.as_mut().submatrix_mut(0, 0, n1, n1).copy_from(gather(a.s.as_ref(), &o1, &o1));
    top.as_mut().submatrix_mut(n1, n1, n2, n2).copy_from(gather(b.s.as_ref(), &o2, &o2));
    top.as_mut().submatrix_mut(0, n1, n1, n2).copy_from(op.dense_block(&p1, &p2));
    top.as_mut().submatrix_mut(n1, 0, n2, n1).copy_from(op.dense_block(&p2, &p1));

    if inner_len > 0 {
        // [S33 A34; A43 S44]
        let mut k = Mat::zeros(inner_len, inner_len);
        k.as_mut().submatrix_mut(0, 0, n3, n3).copy_from(gather(a.s.as_ref(), &i3, &i3));
        k.as_mut().submatrix_mut(n3, n3, n4, n4).copy_from(gather(b.s.as_ref(), &i4, &i4));
        k.as_mut().submatrix_mut(0, n3, n3, n4).copy_from(op.dense_block(&p3, &p4));
        k.as_mut().submatrix_mut(n3, 0, n4, n3).copy_from(op.dense_block(&p4, &p3));
        // [S31 A32; A41 S42]
        let mut z = Mat::zeros(inner_len, outer_len);
        z.as_mut().submatrix_mut(0, 0, n3, n1).copy_from(gather(a.s.as_ref(), &i3, &o1));
        z.as_mut().submatrix_mut(n3, n1, n4, n2).copy_from(gather(b.s.as_ref(), &i4, &o2));
        z.as_mut().submatrix_mut(0, n1, n3, n2).copy_from(op.dense_block(&p3, &p2));
        z.as_mut().submatrix_mut(n3, 0, n4, n1).copy_from(op.dense_block(&p4, &p1));
        // [S13 A14; A23 S24]
        let mut left = Mat::zeros(outer_len, inner_len);
        left.as_mut().submatrix_mut(0, 0, n1, n3).copy_from(gather(a.s.as_ref(), &o1, &i3));
        left.as_mut().submatrix_mut(n1, n3, n2, n4).copy_from(gather(b.s.as_ref(), &o2, &i4));
        left.as_mut().submatrix_mut(0, n3, n1, n4).copy_from(op.dense_block(&p1, &p4));
        left.as_mut().submatrix_mut(n1, 0, n2, n3).copy_from(op.dense_block(&p2, &p3));

        let lu = Lu::factor_checked(k.as_ref(), || ("interface block".into(), describe(&union)))?;
        gemm(top.as_mut(), -1.0, left.as_ref(), lu.solve(z.as_ref()).as_ref());

        if let (Some(ra), Some(rb)) = (&a.rhs, &b.rhs) {
            let f34 = vstack(&[gather_rows(ra.as_ref(), &i3).as_ref(), gather_rows(rb.as_ref(), &i4).as_ref()]);
            let mut f12 = vstack(&[gather_rows(ra.as_ref(), &o1).as_ref(), gather_rows(rb.as_ref(), &o2).as_ref()]);
            gemm(f12.as_mut(), -1.0, left.as_ref(), lu.solve(f34.as_ref()).as_ref());
            return finish_merge(union, op, top, Some(f12), &pos1, &pos2);
        }
    }
    let rhs = match (&a.rhs, &b.rhs) {
        (Some(ra), Some(rb)) => Some(vstack(&[
            gather_rows(ra.as_ref(), &o1).as_ref(),
            gather_rows(rb.as_ref(), &o2).as_ref(),
        ])),
        _ => None,
    };
    finish_merge(union, op, top, rhs, &pos1, &pos2)
}

/// Scatter the `[P1, P2]`-ordered result into perimeter order.
fn finish_merge(
    union: BoxGeom,
    op: &Operator,
    local: Mat<f64>,
    rhs: Option<Mat<f64>>,
    pos1: &[usize],
    pos2: &[usize],
) -> Result<SchurData> {
    let perm: Vec<usize> = pos1.iter().chain(pos2).copied().collect();
    let len = union.boundary_len();
    if perm.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: perm.len(),
        });
    }
    let mut inv = vec![0; len];
    for (local_idx, &pos) in perm.iter().enumerate() {
        inv[pos] = local_idx;
    }
    let s = gather(local.as_ref(), &inv, &inv);
    let rhs = rhs.map(|r| gather_rows(r.as_ref(), &inv));
    Ok(SchurData {
        geom: union,
        boundary: union.perimeter(op.side()),
        s,
        rhs,
    })
}

/// Which pairs of quadrants are merged first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairOrder {
    /// West column and east column first, then west | east.
    ColumnsFirst,
    /// South row and north row first, then south / north.
    RowsFirst,
}

/// Merge quadrants given as `[SW, SE, NW, NE]`.
pub fn merge_four(children: [SchurData; 4], op: &Operator, order: PairOrder) -> Result<SchurData> {
    let [sw, se, nw, ne] = children;
    match order {
        PairOrder::ColumnsFirst => {
            let west = merge_two(&sw, &nw, op)?;
            let east = merge_two(&se, &ne, op)?;
            merge_two(&west, &east, op)
        }
        PairOrder::RowsFirst => {
            let south = merge_two(&sw, &se, op)?;
            let north = merge_two(&nw, &ne, op)?;
            merge_two(&south, &north, op)
        }
    }
}

fn map_level<T: Send, U: Send>(items: Vec<T>, parallel: bool, f: impl Fn(T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

/// Dense Schur complement of the whole tree, bottom-up. Returns the root
/// data and per-level diagnostics.
pub fn build_root_schur(
    op: &Operator,
    tree: &BoxTree,
    loads: Option<&BodyLoadSet>,
    options: &BuildOptions,
) -> Result<(SchurData, Vec<LevelDiagnostics>)> {
    if tree.side() != op.side() {
        return Err(Error::DimensionMismatch {
            expected: op.side(),
            got: tree.side(),
        });
    }
    let mut diags = Vec::new();
    let depth = tree.depth();
    let t0 = Instant::now();
    let leaves: Vec<BoxGeom> = tree.leaves().iter().map(|b| b.geom).collect();
    let mut current = map_level(leaves, options.parallel, |g| leaf_schur(&g, op, loads))?;
    diags.push(dense_diag(depth, "leaf", &current, t0));
    for level in (0..depth).rev() {
        let t0 = Instant::now();
        let mut slots: Vec<Option<SchurData>> = current.into_iter().map(Some).collect();
        let groups: Vec<[SchurData; 4]> = tree
            .level(level)
            .iter()
            .map(|b| b.children.expect("non-leaf level").map(|c| slots[c].take().unwrap()))
            .collect();
        current = map_level(groups, options.parallel, |g| merge_four(g, op, PairOrder::ColumnsFirst))?;
        diags.push(dense_diag(level, "merge", &current, t0));
    }
    Ok((current.pop().unwrap(), diags))
}

fn dense_diag(level: usize, stage: &'static str, boxes: &[SchurData], t0: Instant) -> LevelDiagnostics {
    LevelDiagnostics {
        level,
        stage,
        boxes: boxes.len(),
        max_boundary: boxes.iter().map(|b| b.boundary.len()).max().unwrap_or(0),
        compressed: false,
        max_rank: 0,
        bytes: boxes.iter().map(SchurData::bytes).sum(),
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Root `S` and `G = S^{-1}` by dense nested dissection.
pub fn build_root_dense(
    op: &Operator,
    tree: &BoxTree,
    loads: Option<&BodyLoadSet>,
    options: &BuildOptions,
) -> Result<SolutionOperator> {
    let (root, levels) = build_root_schur(op, tree, loads, options)?;
    let lu = Lu::factor_checked(root.s.as_ref(), || {
        ("root Schur complement".into(), describe(&root.geom))
    })?;
    let g = lu.inverse();
    let mut out = SolutionOperator {
        engine: Engine::Dense,
        boundary: root.boundary,
        root: RootOperator::Dense { s: root.s, g },
        body: None,
        report: BuildReport {
            levels,
            ..Default::default()
        },
    };
    if let (Some(l), Some(rhs)) = (loads, root.rhs) {
        out.attach_body(l, rhs, options.tolerance)?;
    }
    out.finish(0x5eed);
    Ok(out)
}

/// Global dense elimination `A_bb - A_bi A_ii^{-1} A_ib` for a box, without
/// any dissection. Only for small problems.
pub fn brute_force_schur(geom: &BoxGeom, op: &Operator) -> Result<Mat<f64>> {
    let side = op.side();
    let boundary = geom.perimeter(side);
    let interior = geom.interior(side);
    let mut s = op.dense_block(&boundary, &boundary);
    if !interior.is_empty() {
        let lu = Lu::factor_checked(op.dense_block(&interior, &interior).as_ref(), || {
            ("interior block A_ii".into(), describe(geom))
        })?;
        let x = lu.solve(op.dense_block(&interior, &boundary).as_ref());
        s -= matmul(op.dense_block(&boundary, &interior).as_ref(), x.as_ref());
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_tree, discretize};
    use crate::linalg::rel_err;
    use crate::problems::catalog;

    fn laplace_unit(side: usize) -> Operator {
        let spec = crate::grid::ProblemSpec {
            name: "net".into(),
            n: side + 2,
            mode: crate::grid::Mode::Network(crate::grid::Conductivities::uniform(side + 2, 1.0)),
            seed: 0,
        };
        discretize(&spec).unwrap()
    }

    #[test]
    fn single_interior_node_by_hand() {
        let op = laplace_unit(3);
        let geom = BoxGeom::new(0, 0, 3, 3);
        let s = leaf_schur(&geom, &op, None).unwrap().s;
        let boundary = geom.perimeter(3);
        let center = op.id(1, 1);
        let a = Mat::from_fn(8, 1, |i, _| op.coupling(boundary[i], center));
        let want = op.dense_block(&boundary, &boundary) - &a * a.transpose() * faer::Scale(0.25);
        assert!(rel_err(s.as_ref(), want.as_ref()) < 1e-15);
    }

    #[test]
    fn empty_interior_keeps_a_bb() {
        let op = laplace_unit(6);
        let geom = BoxGeom::new(1, 1, 2, 3);
        let s = leaf_schur(&geom, &op, None).unwrap().s;
        let b = geom.perimeter(6);
        assert_eq!(s, op.dense_block(&b, &b));
    }

    #[test]
    fn merge_of_two_leaves_equals_union_leaf() {
        let op = discretize(&catalog("helmholtz1", 10, 0).unwrap()).unwrap();
        let a = leaf_schur(&BoxGeom::new(0, 0, 4, 8), &op, None).unwrap();
        let b = leaf_schur(&BoxGeom::new(4, 0, 4, 8), &op, None).unwrap();
        let m = merge_two(&a, &b, &op).unwrap();
        let direct = leaf_schur(&BoxGeom::new(0, 0, 8, 8), &op, None).unwrap();
        assert_eq!(m.boundary, direct.boundary);
        assert!(rel_err(m.s.as_ref(), direct.s.as_ref()) < 1e-12);
    }

    #[test]
    fn pairing_orders_agree_and_dissected_leaf_matches() {
        let op = discretize(&catalog("diffconv3", 34, 0).unwrap()).unwrap();
        let geom = BoxGeom::new(0, 0, 32, 32);
        let kids = geom.quadrants().map(|g| leaf_schur(&g, &op, None).unwrap());
        let a = merge_four(kids.clone(), &op, PairOrder::ColumnsFirst).unwrap();
        let b = merge_four(kids, &op, PairOrder::RowsFirst).unwrap();
        assert!(rel_err(a.s.as_ref(), b.s.as_ref()) < 1e-10);
        let brute = brute_force_schur(&geom, &op).unwrap();
        let dissected = leaf_schur(&geom, &op, None).unwrap();
        assert!(rel_err(dissected.s.as_ref(), brute.as_ref()) < 1e-10);
    }

    #[test]
    fn root_inverse_and_symmetry() {
        let op = discretize(&catalog("laplace", 18, 0).unwrap()).unwrap();
        let tree = build_tree(16, 64).unwrap();
        let sol = build_root_dense(&op, &tree, None, &BuildOptions::default()).unwrap();
        let RootOperator::Dense { s, g } = &sol.root else { panic!() };
        let gs = g * s;
        let err = (&gs - Mat::<f64>::identity(gs.nrows(), gs.ncols())).norm_max();
        assert!(err < 1e-10, "{err}");
        assert!(rel_err(s.as_ref(), s.transpose()) < 1e-13);
        assert!(sol.report.condition_estimate > 1.0);
    }
}
