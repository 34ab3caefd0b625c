//! Nested dissection with compressed Schur complements.
//!
//! Above the crossover a box's Schur complement is split along the eight
//! perimeter segments (four corners, four edges). Diagonal segment blocks are
//! HBS matrices, blocks between segments are low-rank. Merges eliminate the
//! shared edge pair through a 2x2 block solve whose coupling is anti-diagonal,
//! touching only low-rank factor bundles.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use faer::{Mat, MatRef};
use rayon::prelude::*;

use crate::bodyload::BodyLoadSet;
use crate::dense_nd::{leaf_schur, merge_two, SchurData};
use crate::error::{Error, Result};
use crate::grid::{BoxGeom, BoxTree, Dir, IndexMap, Operator};
use crate::hbs::{HbsMatrix, IndexTree, LowRank, Term};
use crate::hbs_ops::{add_hbs, add_lowrank, invert_hbs, InverseFactors};
use crate::linalg::{block_diag, hstack, matmul, vstack, Lu, Tolerance};
use crate::solution::{
    BuildOptions, BuildReport, Engine, LevelDiagnostics, RootOperator, SolutionOperator,
};

const SEGMENTS: usize = 8;

/// Index tree used for segment `seg` of length `len`: corners are single
/// leaves, south/east edges balanced, north/west edges mirrored so that the
/// two sides of a shared edge carry mirror-image trees.
pub fn canonical_tree(seg: usize, len: usize, leaf: usize) -> IndexTree {
    match seg {
        0 | 2 | 4 | 6 => IndexTree::leaf(len),
        1 | 3 => IndexTree::balanced(len, leaf),
        _ => IndexTree::balanced(len, leaf).mirrored(),
    }
}

/// Compressed Schur complement of one box, in perimeter segment blocks.
#[derive(Clone, Debug)]
pub struct Segmented {
    pub geom: BoxGeom,
    pub diag: Vec<HbsMatrix>,
    /// `off[i][j]` for `i != j`; the diagonal entries are empty placeholders.
    pub off: Vec<Vec<LowRank>>,
    pub rhs: Option<Mat<f64>>,
}

fn offsets(lens: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(lens.len() + 1);
    out.push(0);
    for l in lens {
        out.push(out.last().unwrap() + l);
    }
    out
}

impl Segmented {
    pub fn lens(&self) -> [usize; SEGMENTS] {
        std::array::from_fn(|i| self.diag[i].size())
    }

    pub fn boundary_len(&self) -> usize {
        self.lens().iter().sum()
    }

    /// Compress a dense Schur complement segment by segment.
    pub fn from_dense(d: &SchurData, options: &BuildOptions) -> Result<Self> {
        if d.geom.w < 3 || d.geom.h < 3 {
            return Err(Error::InvalidArgument(format!(
                "box {}x{} is too small to segment",
                d.geom.w, d.geom.h
            )));
        }
        let tol = Tolerance::relative(options.tolerance);
        let lens = d.geom.segment_lengths();
        let off_at = offsets(&lens);
        let block = |i: usize, j: usize| d.s.submatrix(off_at[i], off_at[j], lens[i], lens[j]);
        let diag = (0..SEGMENTS)
            .map(|i| HbsMatrix::compress(block(i, i), &canonical_tree(i, lens[i], options.hbs_leaf), tol))
            .collect();
        let off = (0..SEGMENTS)
            .map(|i| {
                (0..SEGMENTS)
                    .map(|j| {
                        if i == j {
                            LowRank::zeros(0, 0)
                        } else {
                            LowRank::from_dense(block(i, j), tol)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            geom: d.geom,
            diag,
            off,
            rhs: d.rhs.clone(),
        })
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let lens = self.lens();
        let at = offsets(&lens);
        let mut s = Mat::zeros(at[SEGMENTS], at[SEGMENTS]);
        for i in 0..SEGMENTS {
            for j in 0..SEGMENTS {
                let blk = if i == j { self.diag[i].reconstruct() } else { self.off[i][j].to_dense() };
                s.as_mut().submatrix_mut(at[i], at[j], lens[i], lens[j]).copy_from(&blk);
            }
        }
        s
    }

    /// The whole perimeter block as one HBS matrix, joining segments pairwise.
    pub fn to_hbs(&self, tol: Tolerance) -> Result<HbsMatrix> {
        self.join_range(0, SEGMENTS, tol)
    }

    fn join_range(&self, lo: usize, hi: usize, tol: Tolerance) -> Result<HbsMatrix> {
        if hi - lo == 1 {
            return Ok(self.diag[lo].clone());
        }
        let mid = (lo + hi) / 2;
        let a = self.join_range(lo, mid, tol)?;
        let b = self.join_range(mid, hi, tol)?;
        let lens = self.lens();
        let cross = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
            let row_at = offsets(&lens[rows.clone()]);
            let col_at = offsets(&lens[cols.clone()]);
            let terms: Vec<Term<'_>> = rows
                .clone()
                .enumerate()
                .flat_map(|(ri, i)| {
                    let (row_at, col_at) = (&row_at, &col_at);
                    cols.clone().enumerate().map(move |(ci, j)| Term {
                        row: row_at[ri],
                        col: col_at[ci],
                        left: self.off[i][j].left.as_ref(),
                        right: self.off[i][j].right.as_ref(),
                        scale: 1.0,
                    })
                })
                .collect();
            LowRank::from_terms(*row_at.last().unwrap(), *col_at.last().unwrap(), &terms, tol)
        };
        let ab = cross(lo..mid, mid..hi);
        let ba = cross(mid..hi, lo..mid);
        let base = HbsMatrix::block_diag(&a, &b);
        // [[0, ab], [ba, 0]] = blockdiag(L_ab, L_ba) [[0, R_ab], [R_ba, 0]]
        let (na, nb) = (a.size(), b.size());
        let (ka, kb) = (ab.rank(), ba.rank());
        let q = block_diag(ab.left.as_ref(), ba.left.as_ref());
        let mut r = Mat::zeros(ka + kb, na + nb);
        r.as_mut().submatrix_mut(0, na, ka, nb).copy_from(&ab.right);
        r.as_mut().submatrix_mut(ka, 0, kb, na).copy_from(&ba.right);
        add_lowrank_or_keep(&base, q.as_ref(), r.as_ref(), tol)
    }

    pub fn max_rank(&self) -> usize {
        let d = self.diag.iter().map(HbsMatrix::max_rank).max().unwrap_or(0);
        let o = self.off.iter().flatten().map(LowRank::rank).max().unwrap_or(0);
        d.max(o)
    }

    pub fn bytes(&self) -> usize {
        let d: usize = self.diag.iter().map(HbsMatrix::payload_len).sum();
        let o: usize = self.off.iter().flatten().map(LowRank::payload_len).sum();
        let r = self.rhs.as_ref().map_or(0, |r| r.nrows() * r.ncols());
        8 * (d + o + r)
    }
}

fn add_lowrank_or_keep(h: &HbsMatrix, q: MatRef<'_, f64>, r: MatRef<'_, f64>, tol: Tolerance) -> Result<HbsMatrix> {
    if q.ncols() == 0 {
        Ok(h.clone())
    } else {
        add_lowrank(h, q, r, tol)
    }
}

/// A box's Schur complement in whichever form its size calls for.
#[derive(Clone, Debug)]
pub enum StructuredSchur {
    Dense(SchurData),
    Compressed(Segmented),
}

impl StructuredSchur {
    pub fn geom(&self) -> BoxGeom {
        match self {
            StructuredSchur::Dense(d) => d.geom,
            StructuredSchur::Compressed(c) => c.geom,
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        match self {
            StructuredSchur::Dense(d) => d.s.clone(),
            StructuredSchur::Compressed(c) => c.to_dense(),
        }
    }

    pub fn rhs(&self) -> Option<&Mat<f64>> {
        match self {
            StructuredSchur::Dense(d) => d.rhs.as_ref(),
            StructuredSchur::Compressed(c) => c.rhs.as_ref(),
        }
    }

    fn max_rank(&self) -> usize {
        match self {
            StructuredSchur::Dense(_) => 0,
            StructuredSchur::Compressed(c) => c.max_rank(),
        }
    }

    fn bytes(&self) -> usize {
        match self {
            StructuredSchur::Dense(d) => d.bytes(),
            StructuredSchur::Compressed(c) => c.bytes(),
        }
    }
}

/// How the two boxes of a merge sit relative to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// First box west of the second.
    Horizontal,
    /// First box south of the second.
    Vertical,
}

impl Orientation {
    /// Segment relabelling: in the rotated frame, segment `s` is the box's
    /// segment `(s + shift) % 8`.
    fn shift(self) -> usize {
        match self {
            Orientation::Horizontal => 0,
            Orientation::Vertical => 2,
        }
    }
}

fn segment_nodes(geom: &BoxGeom, side: usize, seg: usize) -> Vec<usize> {
    let lens = geom.segment_lengths();
    let at = offsets(&lens);
    geom.perimeter(side)[at[seg]..at[seg + 1]].to_vec()
}

/// Couplings across an interface whose sides are listed in opposite
/// directions: `A_34 = diag(a) J`, `A_43 = diag(b) J`. Fails unless every
/// node of either side has exactly one stencil neighbor on the other side,
/// at the mirrored position.
pub fn interface_coupling(op: &Operator, p3: &[usize], p4: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = p3.len();
    if p4.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: p4.len() });
    }
    let check = |from: &[usize], to: &[usize]| -> Result<Vec<f64>> {
        let index = IndexMap::new(to);
        from.iter()
            .enumerate()
            .map(|(k, &node)| {
                let hits: Vec<usize> = Dir::ALL
                    .iter()
                    .filter_map(|&d| op.neighbor(node, d).and_then(|nb| index.get(nb)))
                    .collect();
                if hits != [m - 1 - k] {
                    return Err(Error::InvalidArgument(format!(
                        "interface coupling is not anti-diagonal at row {k}"
                    )));
                }
                Ok(op.coupling(node, to[m - 1 - k]))
            })
            .collect()
    };
    Ok((check(p3, p4)?, check(p4, p3)?))
}

/// `diag(d) J x`.
fn anti(d: &[f64], x: MatRef<'_, f64>) -> Mat<f64> {
    let m = d.len();
    Mat::from_fn(m, x.ncols(), |i, j| d[i] * x[(m - 1 - i, j)])
}

/// Solver for the interface block `K = [S33 A34; A43 S44]`.
struct InterfaceSolver {
    s33: InverseFactors,
    t: InverseFactors,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl InterfaceSolver {
    fn new(
        s33: &HbsMatrix,
        s44: &HbsMatrix,
        a: Vec<f64>,
        b: Vec<f64>,
        tol: Tolerance,
        fallbacks: &AtomicUsize,
        locate: &dyn Fn(Error, &str) -> Error,
    ) -> Result<Self> {
        let s33_inv = invert_hbs(&s33.shared_bases(tol)).map_err(|e| locate(e, "S33"))?;
        let rev_a: Vec<f64> = a.iter().rev().copied().collect();
        // A43 S33^{-1} A34 = diag(b) (J S33^{-1} J) diag(rev a)
        let coupled = s33_inv.to_hbs().mirrored().diag_scaled(&b, &rev_a).scaled(-1.0);
        let t = if coupled.tree() == s44.tree() {
            add_hbs(s44, &coupled, tol)?
        } else {
            fallbacks.fetch_add(1, Ordering::Relaxed);
            let dense = s44.reconstruct() + coupled.reconstruct();
            HbsMatrix::compress(dense.as_ref(), s44.tree(), tol)
        };
        let t_inv = invert_hbs(&t.shared_bases(tol)).map_err(|e| locate(e, "S44 - A43 S33^-1 A34"))?;
        Ok(Self { s33: s33_inv, t: t_inv, a, b })
    }

    /// `K^{-1} [z3; z4]`.
    fn solve(&self, z3: MatRef<'_, f64>, z4: MatRef<'_, f64>) -> Result<(Mat<f64>, Mat<f64>)> {
        let s3 = self.s33.apply_inverse_mat(z3)?;
        let x4 = self.t.apply_inverse_mat((z4 - anti(&self.b, s3.as_ref())).as_ref())?;
        let x3 = &s3 - self.s33.apply_inverse_mat(anti(&self.a, x4.as_ref()).as_ref())?;
        Ok((x3, x4))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    First,
    Second,
}

use Side::{First as W, Second as E};

/// Union segments in the rotated frame, as pieces of the two boxes.
const UNION_PIECES: [&[(Side, usize)]; SEGMENTS] = [
    &[(W, 0)],
    &[(W, 1), (W, 2), (E, 0), (E, 1)],
    &[(E, 2)],
    &[(E, 3)],
    &[(E, 4)],
    &[(E, 5), (E, 6), (W, 4), (W, 5)],
    &[(W, 6)],
    &[(W, 7)],
];

/// Rotated-frame segments kept by each box (all but the shared edge).
const KEPT: [[usize; 7]; 2] = [[0, 1, 2, 4, 5, 6, 7], [0, 1, 2, 3, 4, 5, 6]];

fn locate_error(e: Error, step: &str, geom: &BoxGeom) -> Error {
    match e {
        Error::Singular { what, location, pivot_ratio } => Error::Singular {
            what: format!("{what} ({step})"),
            location: format!("{location} in merge into box [{}..{}) x [{}..{})", geom.x0, geom.x0 + geom.w, geom.y0, geom.y0 + geom.h),
            pivot_ratio,
        },
        other => other,
    }
}

/// Merge two compressed boxes sharing an edge. Returns the union and the
/// number of dense retree fallbacks taken.
pub fn accel_merge(
    first: &Segmented,
    second: &Segmented,
    orientation: Orientation,
    op: &Operator,
    options: &BuildOptions,
) -> Result<(Segmented, usize)> {
    let fallbacks = AtomicUsize::new(0);
    let out = merge_inner(first, second, orientation, op, options, &fallbacks)?;
    Ok((out, fallbacks.into_inner()))
}

fn merge_inner(
    first: &Segmented,
    second: &Segmented,
    orientation: Orientation,
    op: &Operator,
    options: &BuildOptions,
    fallbacks: &AtomicUsize,
) -> Result<Segmented> {
    let union = first.geom.union(&second.geom).ok_or_else(|| {
        Error::InvalidArgument("merged boxes do not share a full edge".into())
    })?;
    let shift = orientation.shift();
    let seg = |s: usize| (s + shift) % SEGMENTS;
    let boxes = [first, second];
    let bx = |side: Side| boxes[side as usize];
    let tol = Tolerance::relative(options.tolerance);
    let side_len = op.side();
    let locate = |e: Error, step: &str| locate_error(e, step, &union);

    // Layout of the kept segments: first box, then second box.
    let len = |side: Side, s: usize| bx(side).diag[seg(s)].size();
    let mut p_off = [[0usize; SEGMENTS]; 2];
    let mut at = 0;
    for side in [W, E] {
        for &s in &KEPT[side as usize] {
            p_off[side as usize][s] = at;
            at += len(side, s);
        }
    }
    let p_total = at;
    let p1_len = KEPT[0].iter().map(|&s| len(W, s)).sum::<usize>();
    let p2_len = p_total - p1_len;

    // Shared edge: rotated segment 3 of the first box, 7 of the second.
    let (s3, s4) = (seg(3), seg(7));
    let p3 = segment_nodes(&first.geom, side_len, s3);
    let p4 = segment_nodes(&second.geom, side_len, s4);
    let m = p3.len();
    let (a, b) = interface_coupling(op, &p3, &p4)?;

    // Factor bundles of the blocks between the shared edge and the rest.
    let bundle = |side: Side, edge: usize, rows_are_edge: bool| -> LowRank {
        let box_ = bx(side);
        let base = if side == W { 0 } else { p1_len };
        let terms: Vec<Term<'_>> = KEPT[side as usize]
            .iter()
            .map(|&s| {
                let pos = p_off[side as usize][s] - base;
                let blk = if rows_are_edge { &box_.off[edge][seg(s)] } else { &box_.off[seg(s)][edge] };
                Term {
                    row: if rows_are_edge { 0 } else { pos },
                    col: if rows_are_edge { pos } else { 0 },
                    left: blk.left.as_ref(),
                    right: blk.right.as_ref(),
                    scale: 1.0,
                }
            })
            .collect();
        let other = if side == W { p1_len } else { p2_len };
        if rows_are_edge {
            LowRank::from_terms(m, other, &terms, tol)
        } else {
            LowRank::from_terms(other, m, &terms, tol)
        }
    };
    let s31 = bundle(W, s3, true);
    let s13 = bundle(W, s3, false);
    let s42 = bundle(E, s4, true);
    let s24 = bundle(E, s4, false);

    let solver = InterfaceSolver::new(&first.diag[s3], &second.diag[s4], a, b, tol, fallbacks, &locate)?;

    let (k31, k42) = (s31.rank(), s42.rank());
    let n_body = first.rhs.as_ref().zip(second.rhs.as_ref()).map(|(r, _)| r.ncols());
    let nb = n_body.unwrap_or(0);
    let width = k31 + k42 + nb;
    let mut z3 = Mat::zeros(m, width);
    let mut z4 = Mat::zeros(m, width);
    z3.as_mut().submatrix_mut(0, 0, m, k31).copy_from(&s31.left);
    z4.as_mut().submatrix_mut(0, k31, m, k42).copy_from(&s42.left);
    let edge_rows = |r: &Mat<f64>, box_: &Segmented, s: usize| {
        let at = offsets(&box_.lens());
        r.subrows(at[s], at[s + 1] - at[s]).to_owned()
    };
    if let (Some(rw), Some(re)) = (&first.rhs, &second.rhs) {
        z3.as_mut().submatrix_mut(0, k31 + k42, m, nb).copy_from(edge_rows(rw, first, s3));
        z4.as_mut().submatrix_mut(0, k31 + k42, m, nb).copy_from(edge_rows(re, second, s4));
    }
    let (x3, x4) = solver.solve(z3.as_ref(), z4.as_ref())?;

    // Update = blockdiag(L13, L24) C blockdiag(R31, R42), C = [R13 X3; R24 X4].
    let r = k31 + k42;
    let c13 = matmul(s13.right.as_ref(), x3.as_ref());
    let c24 = matmul(s24.right.as_ref(), x4.as_ref());
    let lc_full = vstack(&[
        matmul(s13.left.as_ref(), c13.as_ref()).as_ref(),
        matmul(s24.left.as_ref(), c24.as_ref()).as_ref(),
    ]);
    let lc = lc_full.subcols(0, r);
    let rbig = block_diag(s31.right.as_ref(), s42.right.as_ref());

    // Body-load responses on the kept segments.
    let rhs_kept = match (&first.rhs, &second.rhs) {
        (Some(rw), Some(re)) => {
            let mut parts = Vec::new();
            for (side, rr) in [(W, rw), (E, re)] {
                for &s in &KEPT[side as usize] {
                    parts.push(edge_rows(rr, bx(side), seg(s)));
                }
            }
            let stacked = vstack(&parts.iter().map(|p| p.as_ref()).collect::<Vec<_>>());
            Some(&stacked - lc_full.subcols(r, nb))
        }
        _ => None,
    };

    let piece_rows = |pieces: &[(Side, usize)], m: MatRef<'_, f64>| -> Mat<f64> {
        let parts: Vec<MatRef<'_, f64>> = pieces
            .iter()
            .map(|&(side, s)| m.subrows(p_off[side as usize][s], len(side, s)))
            .collect();
        vstack(&parts)
    };
    let piece_cols = |pieces: &[(Side, usize)]| -> Mat<f64> {
        let parts: Vec<MatRef<'_, f64>> = pieces
            .iter()
            .map(|&(side, s)| rbig.subcols(p_off[side as usize][s], len(side, s)))
            .collect();
        hstack(&parts)
    };
    let node_of_corner = |side: Side, s: usize| segment_nodes(&bx(side).geom, side_len, seg(s))[0];

    let lc_u: Vec<Mat<f64>> = UNION_PIECES.iter().map(|p| piece_rows(p, lc)).collect();
    let r_u: Vec<Mat<f64>> = UNION_PIECES.iter().map(|p| piece_cols(p)).collect();
    let u_len: Vec<usize> = UNION_PIECES.iter().map(|p| p.iter().map(|&(sd, s)| len(sd, s)).sum()).collect();

    // Top-block terms between pieces of two union segments: the boxes' own
    // off-diagonal blocks, plus stencil couplings between adjacent corners.
    let top_terms = |i: usize, j: usize, scalars: &mut Vec<(usize, usize, Mat<f64>)>| -> Vec<(usize, usize, Side, usize, usize)> {
        let mut out = Vec::new();
        let mut ro = 0;
        for &(sp, p) in UNION_PIECES[i] {
            let mut co = 0;
            for &(sq, q) in UNION_PIECES[j] {
                if sp == sq && p != q {
                    out.push((ro, co, sp, seg(p), seg(q)));
                } else if sp != sq && len(sp, p) == 1 && len(sq, q) == 1 {
                    let v = op.coupling(node_of_corner(sp, p), node_of_corner(sq, q));
                    if v != 0.0 {
                        scalars.push((ro, co, Mat::from_fn(1, 1, |_, _| v)));
                    }
                }
                co += len(sq, q);
            }
            ro += len(sp, p);
        }
        out
    };
    let one = Mat::<f64>::identity(1, 1);
    let block_sum = |i: usize, j: usize| -> LowRank {
        let mut scalars = Vec::new();
        let pairs = top_terms(i, j, &mut scalars);
        let mut terms: Vec<Term<'_>> = pairs
            .iter()
            .map(|&(ro, co, sd, p, q)| {
                let blk = &bx(sd).off[p][q];
                Term { row: ro, col: co, left: blk.left.as_ref(), right: blk.right.as_ref(), scale: 1.0 }
            })
            .collect();
        terms.extend(scalars.iter().map(|(ro, co, v)| Term {
            row: *ro,
            col: *co,
            left: v.as_ref(),
            right: one.as_ref(),
            scale: 1.0,
        }));
        terms.push(Term { row: 0, col: 0, left: lc_u[i].as_ref(), right: r_u[j].as_ref(), scale: -1.0 });
        LowRank::from_terms(u_len[i], u_len[j], &terms, tol)
    };

    let mut diag_rot = Vec::with_capacity(SEGMENTS);
    for i in 0..SEGMENTS {
        let pieces = UNION_PIECES[i];
        let d = if pieces.len() == 1 {
            let (sd, s) = pieces[0];
            let own = &bx(sd).diag[seg(s)];
            let neg = -&lc_u[i];
            if u_len[i] == 1 {
                let v = own.reconstruct()[(0, 0)] + matmul(neg.as_ref(), r_u[i].as_ref())[(0, 0)];
                HbsMatrix::from_diagonal(own.tree(), &[v])
            } else {
                add_lowrank_or_keep(own, neg.as_ref(), r_u[i].as_ref(), tol)?
            }
        } else {
            let d: Vec<&HbsMatrix> = pieces.iter().map(|&(sd, s)| &bx(sd).diag[seg(s)]).collect();
            let base = HbsMatrix::block_diag(&HbsMatrix::block_diag(d[0], d[1]), &HbsMatrix::block_diag(d[2], d[3]));
            let lr = block_sum(i, i);
            add_lowrank_or_keep(&base, lr.left.as_ref(), lr.right.as_ref(), tol)?
        };
        diag_rot.push(d);
    }
    let off_rot: Vec<Vec<LowRank>> = (0..SEGMENTS)
        .map(|i| {
            (0..SEGMENTS)
                .map(|j| if i == j { LowRank::zeros(0, 0) } else { block_sum(i, j) })
                .collect()
        })
        .collect();

    // Back to the true orientation: rotated segment i is union segment seg(i).
    let mut diag: Vec<Option<HbsMatrix>> = vec![None; SEGMENTS];
    let mut off: Vec<Vec<LowRank>> = vec![vec![LowRank::zeros(0, 0); SEGMENTS]; SEGMENTS];
    for (i, d) in diag_rot.into_iter().enumerate() {
        diag[seg(i)] = Some(d);
    }
    for (i, row) in off_rot.into_iter().enumerate() {
        for (j, blk) in row.into_iter().enumerate() {
            off[seg(i)][seg(j)] = blk;
        }
    }
    let rhs = rhs_kept.map(|f| {
        let mut rows: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); SEGMENTS];
        for (i, pieces) in UNION_PIECES.iter().enumerate() {
            rows[seg(i)] = piece_rows(pieces, f.as_ref());
        }
        vstack(&rows.iter().map(|r| r.as_ref()).collect::<Vec<_>>())
    });
    let out = Segmented {
        geom: union,
        diag: diag.into_iter().map(Option::unwrap).collect(),
        off,
        rhs,
    };
    debug_assert_eq!(out.lens(), union.segment_lengths());
    Ok(out)
}

/// Merge two boxes in whatever representation the stage calls for.
fn merge_any(
    first: StructuredSchur,
    second: StructuredSchur,
    orientation: Orientation,
    compress: bool,
    op: &Operator,
    options: &BuildOptions,
    fallbacks: &AtomicUsize,
) -> Result<StructuredSchur> {
    match (first, second) {
        (StructuredSchur::Dense(a), StructuredSchur::Dense(b)) => {
            let merged = merge_two(&a, &b, op)?;
            if compress && merged.geom.w >= 3 && merged.geom.h >= 3 {
                Ok(StructuredSchur::Compressed(Segmented::from_dense(&merged, options)?))
            } else {
                Ok(StructuredSchur::Dense(merged))
            }
        }
        (a, b) => {
            let a = into_segmented(a, options)?;
            let b = into_segmented(b, options)?;
            Ok(StructuredSchur::Compressed(merge_inner(&a, &b, orientation, op, options, fallbacks)?))
        }
    }
}

fn into_segmented(s: StructuredSchur, options: &BuildOptions) -> Result<Segmented> {
    match s {
        StructuredSchur::Dense(d) => Segmented::from_dense(&d, options),
        StructuredSchur::Compressed(c) => Ok(c),
    }
}

fn par_map<T: Send, U: Send>(items: Vec<T>, parallel: bool, f: impl Fn(T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

fn stage_diag(level: usize, stage: &'static str, boxes: &[StructuredSchur], t0: Instant) -> LevelDiagnostics {
    LevelDiagnostics {
        level,
        stage,
        boxes: boxes.len(),
        max_boundary: boxes.iter().map(|b| b.geom().boundary_len()).max().unwrap_or(0),
        compressed: boxes.iter().any(|b| matches!(b, StructuredSchur::Compressed(_))),
        max_rank: boxes.iter().map(StructuredSchur::max_rank).max().unwrap_or(0),
        bytes: boxes.iter().map(StructuredSchur::bytes).sum(),
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Build the root Schur complement bottom-up, compressing from the first
/// stage whose boxes reach `options.crossover` boundary nodes.
pub fn build_root_structured(
    op: &Operator,
    tree: &BoxTree,
    loads: Option<&BodyLoadSet>,
    options: &BuildOptions,
) -> Result<(StructuredSchur, BuildReport)> {
    if tree.side() != op.side() {
        return Err(Error::DimensionMismatch { expected: op.side(), got: tree.side() });
    }
    let fallbacks = AtomicUsize::new(0);
    let mut report = BuildReport::default();
    let depth = tree.depth();
    let wants_compress = |geoms: &[BoxGeom]| {
        geoms.iter().map(BoxGeom::boundary_len).max().unwrap_or(0) >= options.crossover
            && geoms.iter().all(|g| g.w >= 3 && g.h >= 3)
    };

    let t0 = Instant::now();
    let leaves: Vec<BoxGeom> = tree.leaves().iter().map(|b| b.geom).collect();
    let compress = wants_compress(&leaves);
    let mut current = par_map(leaves, options.parallel, |g| {
        let d = leaf_schur(&g, op, loads)?;
        Ok(if compress {
            StructuredSchur::Compressed(Segmented::from_dense(&d, options)?)
        } else {
            StructuredSchur::Dense(d)
        })
    })?;
    report.levels.push(stage_diag(depth, "leaf", &current, t0));

    for level in (0..depth).rev() {
        let parents = tree.level(level);
        let mut slots: Vec<Option<StructuredSchur>> = current.into_iter().map(Some).collect();
        let groups: Vec<[StructuredSchur; 4]> = parents
            .iter()
            .map(|p| p.children.expect("non-leaf level").map(|c| slots[c].take().unwrap()))
            .collect();

        // Columns: SW + NW and SE + NE.
        let t0 = Instant::now();
        let column_geoms: Vec<BoxGeom> = groups
            .iter()
            .flat_map(|[sw, se, nw, ne]| [sw.geom().union(&nw.geom()).unwrap(), se.geom().union(&ne.geom()).unwrap()])
            .collect();
        let compress = wants_compress(&column_geoms);
        let pairs: Vec<(StructuredSchur, StructuredSchur)> = groups
            .into_iter()
            .flat_map(|[sw, se, nw, ne]| [(sw, nw), (se, ne)])
            .collect();
        let columns = par_map(pairs, options.parallel, |(s, n)| {
            merge_any(s, n, Orientation::Vertical, compress, op, options, &fallbacks)
        })?;
        report.levels.push(stage_diag(level, "columns", &columns, t0));

        // West | east.
        let t0 = Instant::now();
        let union_geoms: Vec<BoxGeom> = parents.iter().map(|p| p.geom).collect();
        let compress = wants_compress(&union_geoms);
        let mut it = columns.into_iter();
        let mut pairs = Vec::with_capacity(parents.len());
        while let (Some(w), Some(e)) = (it.next(), it.next()) {
            pairs.push((w, e));
        }
        current = par_map(pairs, options.parallel, |(w, e)| {
            merge_any(w, e, Orientation::Horizontal, compress, op, options, &fallbacks)
        })?;
        report.levels.push(stage_diag(level, "merge", &current, t0));
    }
    for l in &report.levels {
        if l.max_rank > options.rank_cap {
            let msg = format!(
                "rank {} exceeds cap {} at level {} ({})",
                l.max_rank, options.rank_cap, l.level, l.stage
            );
            log::warn!("{msg}");
            report.warnings.push(msg);
        }
    }
    report.retree_fallbacks = fallbacks.into_inner();
    Ok((current.pop().unwrap(), report))
}

/// Root `S` in HBS form with its inverse factors; falls back to the dense
/// root when no stage reached the crossover.
pub fn build_root_accel(
    op: &Operator,
    tree: &BoxTree,
    loads: Option<&BodyLoadSet>,
    options: &BuildOptions,
) -> Result<SolutionOperator> {
    let (root, mut report) = build_root_structured(op, tree, loads, options)?;
    let geom = root.geom();
    let boundary = geom.perimeter(op.side());
    let t0 = Instant::now();
    let (root_op, rhs) = match root {
        StructuredSchur::Dense(d) => {
            let lu = Lu::factor_checked(d.s.as_ref(), || ("root Schur complement".into(), "root box".into()))?;
            let g = lu.inverse();
            (RootOperator::Dense { s: d.s, g }, d.rhs)
        }
        StructuredSchur::Compressed(c) => {
            let tol = Tolerance::relative(options.tolerance);
            let s = c.to_hbs(tol)?.shared_bases(tol);
            let inverse = invert_hbs(&s).map_err(|e| locate_error(e, "root inversion", &geom))?;
            (RootOperator::Compressed { s, inverse }, c.rhs)
        }
    };
    report.levels.push(LevelDiagnostics {
        level: 0,
        stage: "root",
        boxes: 1,
        max_boundary: boundary.len(),
        compressed: matches!(root_op, RootOperator::Compressed { .. }),
        max_rank: match &root_op {
            RootOperator::Compressed { s, .. } => s.max_rank(),
            RootOperator::Dense { .. } => 0,
        },
        bytes: 0,
        seconds: t0.elapsed().as_secs_f64(),
    });
    let mut out = SolutionOperator {
        engine: Engine::Accelerated,
        boundary,
        root: root_op,
        body: None,
        report,
    };
    let bytes = out.storage_bytes();
    if let Some(last) = out.report.levels.last_mut() {
        last.bytes = bytes;
    }
    if let (Some(l), Some(rhs)) = (loads, rhs) {
        out.attach_body(l, rhs, options.tolerance)?;
    }
    out.finish(0x5eed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense_nd::build_root_schur;
    use crate::grid::{build_tree, discretize};
    use crate::linalg::rel_err;
    use crate::problems::catalog;

    fn opts(crossover: usize, leaf: usize) -> BuildOptions {
        BuildOptions {
            tolerance: 1e-10,
            crossover,
            hbs_leaf: leaf,
            parallel: false,
            ..Default::default()
        }
    }

    #[test]
    fn segmented_roundtrip_and_join() {
        let op = discretize(&catalog("laplace", 26, 0).unwrap()).unwrap();
        let geom = BoxGeom::new(0, 0, 24, 24);
        let d = leaf_schur(&geom, &op, None).unwrap();
        let seg = Segmented::from_dense(&d, &opts(0, 8)).unwrap();
        assert!(rel_err(seg.to_dense().as_ref(), d.s.as_ref()) < 1e-9);
        let h = seg.to_hbs(Tolerance::relative(1e-10)).unwrap();
        assert!(rel_err(h.reconstruct().as_ref(), d.s.as_ref()) < 1e-9);
    }

    #[test]
    fn interface_coupling_is_anti_diagonal() {
        let op = discretize(&catalog("diffconv1", 12, 0).unwrap()).unwrap();
        let w = BoxGeom::new(0, 0, 5, 10);
        let e = BoxGeom::new(5, 0, 5, 10);
        let p3 = segment_nodes(&w, 10, 3);
        let p4 = segment_nodes(&e, 10, 7);
        let (a, b) = interface_coupling(&op, &p3, &p4).unwrap();
        let m = p3.len();
        for k in 0..m {
            assert_eq!(a[k], op.coupling(p3[k], p4[m - 1 - k]));
            assert_eq!(b[k], op.coupling(p4[k], p3[m - 1 - k]));
        }
        // Same-direction listing is not anti-diagonal.
        let mut p4_rev = p4.clone();
        p4_rev.reverse();
        assert!(interface_coupling(&op, &p3, &p4_rev).is_err());
    }

    #[test]
    fn structured_merges_match_dense_both_orientations() {
        let op = discretize(&catalog("diffconv3", 34, 0).unwrap()).unwrap();
        let o = opts(0, 6);
        let quads = BoxGeom::new(0, 0, 32, 32).quadrants();
        let dense: Vec<SchurData> = quads.iter().map(|g| leaf_schur(g, &op, None).unwrap()).collect();
        let seg: Vec<Segmented> = dense.iter().map(|d| Segmented::from_dense(d, &o).unwrap()).collect();
        let (west, f1) = accel_merge(&seg[0], &seg[2], Orientation::Vertical, &op, &o).unwrap();
        let (east, f2) = accel_merge(&seg[1], &seg[3], Orientation::Vertical, &op, &o).unwrap();
        let west_dense = merge_two(&dense[0], &dense[2], &op).unwrap();
        assert!(rel_err(west.to_dense().as_ref(), west_dense.s.as_ref()) < 1e-8);
        let (root, f3) = accel_merge(&west, &east, Orientation::Horizontal, &op, &o).unwrap();
        assert_eq!(f1 + f2 + f3, 0);
        let want = crate::dense_nd::brute_force_schur(&BoxGeom::new(0, 0, 32, 32), &op).unwrap();
        assert!(rel_err(root.to_dense().as_ref(), want.as_ref()) < 1e-8);
    }

    #[test]
    fn full_build_matches_dense_engine_with_loads() {
        let op = discretize(&catalog("random1", 42, 3).unwrap()).unwrap();
        let tree = build_tree(40, 100).unwrap();
        let loads = BodyLoadSet::new(42, &[(5, 7), (20, 21), (30, 12)]).unwrap();
        let o = opts(30, 8);
        let (root, report) = build_root_structured(&op, &tree, Some(&loads), &o).unwrap();
        assert_eq!(report.retree_fallbacks, 0);
        let (want, _) = build_root_schur(&op, &tree, Some(&loads), &o).unwrap();
        assert!(matches!(root, StructuredSchur::Compressed(_)));
        assert!(rel_err(root.to_dense().as_ref(), want.s.as_ref()) < 1e-8);
        assert!(rel_err(root.rhs().unwrap().as_ref(), want.rhs.as_ref().unwrap().as_ref()) < 1e-8);
    }

    #[test]
    fn convective_root_inverts_accurately() {
        // Row and column bases of this Schur complement differ; inverting
        // with them directly amplified errors by ~1e15.
        let op = discretize(&catalog("diffconv1", 32, 0).unwrap()).unwrap();
        let tree = build_tree(30, 64).unwrap();
        let o = BuildOptions { tolerance: 1e-7, crossover: 32, ..Default::default() };
        let accel = build_root_accel(&op, &tree, None, &o).unwrap();
        let dense = crate::dense_nd::build_root_dense(&op, &tree, None, &o).unwrap();
        assert!(matches!(accel.root, RootOperator::Compressed { .. }));
        let g = accel.dense_g();
        assert!(rel_err(g.as_ref(), dense.dense_g().as_ref()) < 1e-6);
    }
}
