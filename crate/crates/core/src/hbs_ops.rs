//! Arithmetic on HBS matrices: inversion, inverse application, addition
//! with recompression, and low-rank updates.

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::hbs::{HbsMatrix, HbsNode, IndexTree, NodeKind};
use crate::linalg::{block_diag, gemm, matmul, svd_thin, vstack, Lu, Tolerance};

/// Local factors of `(U Ht V^T + D)^{-1} = E (Ht + Dhat)^{-1} F^T + G` for one
/// diagonal block `D` with bases `U`, `V`.
struct LocalInverse {
    e: Mat<f64>,
    f: Mat<f64>,
    g: Mat<f64>,
    dhat: Mat<f64>,
}

fn local_inverse(
    d: MatRef<'_, f64>,
    u: MatRef<'_, f64>,
    v: MatRef<'_, f64>,
    names: (&str, &str),
    location: impl Fn() -> String,
) -> Result<LocalInverse> {
    let lu = Lu::factor_checked(d, || (names.0.to_string(), location()))?;
    let dinv = lu.inverse();
    let dinv_u = matmul(dinv.as_ref(), u);
    let vt_dinv = matmul(v.transpose(), dinv.as_ref());
    let core = matmul(v.transpose(), dinv_u.as_ref());
    let core_lu = Lu::factor_checked(core.as_ref(), || (names.1.to_string(), location()))?;
    let dhat = core_lu.inverse();
    let e = matmul(dinv_u.as_ref(), dhat.as_ref());
    let ft = matmul(dhat.as_ref(), vt_dinv.as_ref());
    let mut g = dinv;
    gemm(g.as_mut(), -1.0, e.as_ref(), vt_dinv.as_ref());
    Ok(LocalInverse {
        e,
        f: ft.transpose().to_owned(),
        g,
        dhat,
    })
}

/// A one-level block separable matrix `blockdiag(U) Ht blockdiag(V)^T + blockdiag(D)`.
/// `ht` is `K x K` with `K` the total rank; its diagonal blocks are ignored.
#[derive(Clone, Debug)]
pub struct BlockSeparable {
    pub d: Vec<Mat<f64>>,
    pub u: Vec<Mat<f64>>,
    pub v: Vec<Mat<f64>>,
    pub ht: Mat<f64>,
}

impl BlockSeparable {
    fn offsets(&self, rank: bool) -> Vec<usize> {
        let mut out = vec![0];
        for (d, u) in self.d.iter().zip(&self.u) {
            let step = if rank { u.ncols() } else { d.nrows() };
            out.push(out.last().unwrap() + step);
        }
        out
    }

    /// The coupling matrix with zeroed diagonal blocks.
    fn coupling(&self) -> Mat<f64> {
        let ko = self.offsets(true);
        let mut ht = self.ht.clone();
        for i in 0..self.d.len() {
            let k = ko[i + 1] - ko[i];
            ht.as_mut().submatrix_mut(ko[i], ko[i], k, k).fill(0.0);
        }
        ht
    }

    pub fn to_dense(&self) -> Mat<f64> {
        self.dense_with_core(self.coupling().as_ref())
    }

    fn dense_with_core(&self, core: MatRef<'_, f64>) -> Mat<f64> {
        let no = self.offsets(false);
        let ko = self.offsets(true);
        let n = *no.last().unwrap();
        let k = *ko.last().unwrap();
        let mut ubig = Mat::zeros(n, k);
        let mut vbig = Mat::zeros(n, k);
        let mut out = Mat::zeros(n, n);
        for i in 0..self.d.len() {
            let (m, r) = (no[i + 1] - no[i], ko[i + 1] - ko[i]);
            ubig.as_mut().submatrix_mut(no[i], ko[i], m, r).copy_from(&self.u[i]);
            vbig.as_mut().submatrix_mut(no[i], ko[i], m, r).copy_from(&self.v[i]);
            out.as_mut().submatrix_mut(no[i], no[i], m, m).copy_from(&self.d[i]);
        }
        gemm(out.as_mut(), 1.0, matmul(ubig.as_ref(), core).as_ref(), vbig.transpose());
        out
    }
}

/// `H^{-1} = blockdiag(E) core blockdiag(F)^T + blockdiag(G)` with `core = (Ht + Dhat)^{-1}`.
#[derive(Clone, Debug)]
pub struct BlockSeparableInverse {
    pub e: Vec<Mat<f64>>,
    pub f: Vec<Mat<f64>>,
    pub g: Vec<Mat<f64>>,
    pub core: Mat<f64>,
}

impl BlockSeparableInverse {
    pub fn to_dense(&self) -> Mat<f64> {
        BlockSeparable {
            d: self.g.clone(),
            u: self.e.clone(),
            v: self.f.clone(),
            ht: Mat::zeros(0, 0),
        }
        .dense_with_core(self.core.as_ref())
    }
}

/// One-level Woodbury inversion of a block separable matrix.
pub fn invert_bs_onelevel(h: &BlockSeparable) -> Result<BlockSeparableInverse> {
    let p = h.d.len();
    if h.u.len() != p || h.v.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: h.u.len().min(h.v.len()),
        });
    }
    let ko = h.offsets(true);
    let mut core = h.coupling();
    let (mut e, mut f, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..p {
        let li = local_inverse(
            h.d[i].as_ref(),
            h.u[i].as_ref(),
            h.v[i].as_ref(),
            ("D", "Dhat"),
            || format!("block {i}"),
        )?;
        let k = ko[i + 1] - ko[i];
        core.as_mut().submatrix_mut(ko[i], ko[i], k, k).copy_from(&li.dhat);
        e.push(li.e);
        f.push(li.f);
        g.push(li.g);
    }
    let core = Lu::factor_checked(core.as_ref(), || ("Ht + Dhat".to_string(), "coupling".to_string()))?.inverse();
    Ok(BlockSeparableInverse { e, f, g, core })
}

#[derive(Clone, Debug)]
pub struct InverseNode {
    pub e: Mat<f64>,
    pub f: Mat<f64>,
    pub g: Mat<f64>,
}

/// Telescoping factors of `H^{-1}`; the root entry carries only `g`.
#[derive(Clone, Debug)]
pub struct InverseFactors {
    tree: IndexTree,
    nodes: Vec<InverseNode>,
}

fn reduced_block(h: &HbsMatrix, id: usize, dhat: &[Mat<f64>]) -> Mat<f64> {
    let node = &h.nodes()[id];
    match (&node.kind, h.tree().node(id).children) {
        (NodeKind::Leaf { d }, _) => d.clone(),
        (NodeKind::Parent { b12, b21 }, Some([a, b])) => {
            let (ka, kb) = (dhat[a].nrows(), dhat[b].nrows());
            let mut m = block_diag(dhat[a].as_ref(), dhat[b].as_ref());
            m.as_mut().submatrix_mut(0, ka, ka, kb).copy_from(b12);
            m.as_mut().submatrix_mut(ka, 0, kb, ka).copy_from(b21);
            m
        }
        _ => unreachable!(),
    }
}

/// Multi-level inversion, finest level first.
pub fn invert_hbs(h: &HbsMatrix) -> Result<InverseFactors> {
    let tree = h.tree();
    let count = tree.len();
    let mut dhat: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
    let mut nodes: Vec<Option<InverseNode>> = vec![None; count];
    for id in (0..count).rev() {
        let dt = reduced_block(h, id, &dhat);
        let level = tree.node(id).level;
        if id == 0 {
            let lu = Lu::factor_checked(dt.as_ref(), || {
                ("root coupling block".to_string(), format!("node 0 (level {level})"))
            })?;
            nodes[0] = Some(InverseNode {
                e: Mat::zeros(dt.nrows(), 0),
                f: Mat::zeros(dt.nrows(), 0),
                g: lu.inverse(),
            });
            break;
        }
        let node: &HbsNode = &h.nodes()[id];
        let li = local_inverse(
            dt.as_ref(),
            node.u.as_ref(),
            node.v.as_ref(),
            ("reduced diagonal block", "V^T D^-1 U"),
            || format!("node {id} (level {level})"),
        )?;
        if let Some([a, b]) = tree.node(id).children {
            dhat[a] = Mat::zeros(0, 0);
            dhat[b] = Mat::zeros(0, 0);
        }
        dhat[id] = li.dhat;
        nodes[id] = Some(InverseNode {
            e: li.e,
            f: li.f,
            g: li.g,
        });
    }
    Ok(InverseFactors {
        tree: tree.clone(),
        nodes: nodes.into_iter().map(Option::unwrap).collect(),
    })
}

fn factor_views(n: &InverseNode, transpose: bool) -> (MatRef<'_, f64>, MatRef<'_, f64>, MatRef<'_, f64>) {
    if transpose {
        (n.f.as_ref(), n.e.as_ref(), n.g.transpose())
    } else {
        (n.e.as_ref(), n.f.as_ref(), n.g.as_ref())
    }
}

impl InverseFactors {
    pub fn tree(&self) -> &IndexTree {
        &self.tree
    }

    pub fn nodes(&self) -> &[InverseNode] {
        &self.nodes
    }

    pub fn size(&self) -> usize {
        self.tree.size()
    }

    pub fn payload_len(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.e.nrows() * n.e.ncols() + n.f.nrows() * n.f.ncols() + n.g.nrows() * n.g.ncols())
            .sum()
    }

    /// Bytes in the binary layout: a node-count header, per node the three
    /// shapes, then the values.
    pub fn encoded_len(&self) -> usize {
        4 + 8 + 48 * self.nodes.len() + 8 * self.payload_len()
    }

    pub fn apply_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.apply_inverse_mat(crate::linalg::col(x).as_ref())?;
        Ok(crate::linalg::to_vec(y.as_ref()))
    }

    pub fn apply_inverse_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.sweep(x, false)
    }

    /// `H^{-T} x`.
    pub fn apply_inverse_transpose_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.sweep(x, true)
    }

    fn sweep(&self, x: MatRef<'_, f64>, transpose: bool) -> Result<Mat<f64>> {
        if x.nrows() != self.size() {
            return Err(Error::DimensionMismatch {
                expected: self.size(),
                got: x.nrows(),
            });
        }
        let c = x.ncols();
        let count = self.nodes.len();
        let tree = &self.tree;
        // Upward: xt = local input (x at a leaf, stacked children's xhat
        // otherwise), xhat = F^T xt.
        let mut xt: Vec<Mat<f64>> = vec![Mat::zeros(0, c); count];
        let mut xhat: Vec<Mat<f64>> = vec![Mat::zeros(0, c); count];
        for id in (0..count).rev() {
            let tn = tree.node(id);
            xt[id] = match tn.children {
                None => x.subrows(tn.start, tn.len()).to_owned(),
                Some([a, b]) => vstack(&[xhat[a].as_ref(), xhat[b].as_ref()]),
            };
            if id > 0 {
                let (_, f, _) = factor_views(&self.nodes[id], transpose);
                xhat[id] = matmul(f.transpose(), xt[id].as_ref());
            }
        }
        // Downward: yt = E yhat + G xt, split among the children.
        let mut yhat: Vec<Mat<f64>> = vec![Mat::zeros(0, c); count];
        let mut y = Mat::zeros(self.size(), c);
        for id in 0..count {
            let tn = tree.node(id);
            let (e, _, g) = factor_views(&self.nodes[id], transpose);
            let mut yt = matmul(g, xt[id].as_ref());
            if id > 0 {
                gemm(yt.as_mut(), 1.0, e, yhat[id].as_ref());
            }
            match tn.children {
                None => y.as_mut().subrows_mut(tn.start, tn.len()).copy_from(&yt),
                Some([a, b]) => {
                    let ka = xhat[a].nrows();
                    let kb = xhat[b].nrows();
                    yhat[a] = yt.subrows(0, ka).to_owned();
                    yhat[b] = yt.subrows(ka, kb).to_owned();
                }
            }
        }
        Ok(y)
    }

    /// The inverse as an HBS matrix on the same tree, with ranks of `H`.
    pub fn to_hbs(&self) -> HbsMatrix {
        let tree = &self.tree;
        let count = self.nodes.len();
        let mut yhat: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
        let mut out: Vec<Option<HbsNode>> = vec![None; count];
        for id in 0..count {
            let inv = &self.nodes[id];
            let mut full = inv.g.clone();
            if id > 0 {
                let ey = matmul(inv.e.as_ref(), yhat[id].as_ref());
                gemm(full.as_mut(), 1.0, ey.as_ref(), inv.f.transpose());
            }
            let rank = if id == 0 { 0 } else { inv.e.ncols() };
            let rows = full.nrows();
            let (u, v) = if id == 0 {
                (Mat::zeros(rows, 0), Mat::zeros(rows, 0))
            } else {
                (inv.e.clone(), inv.f.clone())
            };
            debug_assert_eq!(u.ncols(), rank);
            let kind = match tree.node(id).children {
                None => NodeKind::Leaf { d: full },
                Some([a, b]) => {
                    let ka = self.nodes[a].e.ncols();
                    let kb = self.nodes[b].e.ncols();
                    yhat[a] = full.submatrix(0, 0, ka, ka).to_owned();
                    yhat[b] = full.submatrix(ka, ka, kb, kb).to_owned();
                    NodeKind::Parent {
                        b12: full.submatrix(0, ka, ka, kb).to_owned(),
                        b21: full.submatrix(ka, 0, kb, ka).to_owned(),
                    }
                }
            };
            out[id] = Some(HbsNode { u, v, kind });
        }
        let mut h = HbsMatrix::from_parts(tree.clone(), out.into_iter().map(Option::unwrap).collect())
            .expect("inverse factors have consistent shapes");
        h.orthonormalize();
        h
    }
}

/// Absolute truncation floor for sums whose operands have Frobenius norms
/// adding up to `scale`: below this, singular values are cancellation noise.
fn noise_floor(scale: f64) -> f64 {
    64.0 * f64::EPSILON * scale
}

/// Re-truncate all bases of `h` at `tol` without changing the tree.
pub fn recompress(h: &HbsMatrix, tol: Tolerance) -> HbsMatrix {
    let mut h = h.clone();
    h.orthonormalize();
    let tree = h.tree.clone();
    let count = tree.len();
    if count == 1 {
        return h;
    }
    // Top-down generators: for a child s of t, the row generator collects
    // everything multiplying U_s from the left in the off-diagonal block row.
    let mut lu_gen: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
    let mut lv_gen: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
    let mut wu: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
    let mut wv: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
    let mut ru = vec![0usize; count];
    let mut rv = vec![0usize; count];
    for id in 0..count {
        let Some([a, b]) = tree.node(id).children else { continue };
        let node = &h.nodes[id];
        let NodeKind::Parent { b12, b21 } = &node.kind else { unreachable!() };
        let ka = h.nodes[a].rank();
        let kb = h.nodes[b].rank();
        for (child, first) in [(a, true), (b, false)] {
            let (off_row, off_col) = if first { (b12, b21) } else { (b21, b12) };
            let (start, len) = if first { (0, ka) } else { (ka, kb) };
            let mut row_parts = vec![off_row.clone()];
            let mut col_parts = vec![off_col.transpose().to_owned()];
            if id != 0 {
                row_parts.push(matmul(node.u.subrows(start, len), lu_gen[id].as_ref()));
                col_parts.push(matmul(node.v.subrows(start, len), lv_gen[id].as_ref()));
            }
            let gu = crate::linalg::hstack(&row_parts.iter().map(|m| m.as_ref()).collect::<Vec<_>>());
            let gv = crate::linalg::hstack(&col_parts.iter().map(|m| m.as_ref()).collect::<Vec<_>>());
            let (w1, s1, _) = svd_thin(gu.as_ref());
            let (w2, s2, _) = svd_thin(gv.as_ref());
            ru[child] = tol.rank(&s1);
            rv[child] = tol.rank(&s2);
            lu_gen[child] = crate::linalg::scale_cols(w1.as_ref(), &s1);
            lv_gen[child] = crate::linalg::scale_cols(w2.as_ref(), &s2);
            wu[child] = w1;
            wv[child] = w2;
        }
    }
    // Ranks, leaves first; a parent never keeps more than its children pass up.
    let mut k = vec![0usize; count];
    for id in (1..count).rev() {
        let cap = match tree.node(id).children {
            None => tree.node(id).len(),
            Some([a, b]) => k[a] + k[b],
        };
        k[id] = ru[id].max(rv[id]).min(cap).min(wu[id].ncols());
    }
    let tu: Vec<Mat<f64>> = (0..count).map(|i| wu[i].subcols(0, k[i].min(wu[i].ncols())).to_owned()).collect();
    let tv: Vec<Mat<f64>> = (0..count).map(|i| wv[i].subcols(0, k[i].min(wv[i].ncols())).to_owned()).collect();
    for id in 0..count {
        let children = tree.node(id).children;
        let node = &mut h.nodes[id];
        match children {
            None => {
                node.u = matmul(node.u.as_ref(), tu[id].as_ref());
                node.v = matmul(node.v.as_ref(), tv[id].as_ref());
            }
            Some([a, b]) => {
                if let NodeKind::Parent { b12, b21 } = &mut node.kind {
                    *b12 = matmul(matmul(tu[a].transpose(), b12.as_ref()).as_ref(), tv[b].as_ref());
                    *b21 = matmul(matmul(tu[b].transpose(), b21.as_ref()).as_ref(), tv[a].as_ref());
                }
                let left_u = block_diag(tu[a].transpose(), tu[b].transpose());
                let left_v = block_diag(tv[a].transpose(), tv[b].transpose());
                if id == 0 {
                    node.u = Mat::zeros(left_u.nrows(), 0);
                    node.v = Mat::zeros(left_v.nrows(), 0);
                } else {
                    node.u = matmul(matmul(left_u.as_ref(), node.u.as_ref()).as_ref(), tu[id].as_ref());
                    node.v = matmul(matmul(left_v.as_ref(), node.v.as_ref()).as_ref(), tv[id].as_ref());
                }
            }
        }
    }
    h.orthonormalize();
    h
}

/// Stack the bases of `a` and `b` node by node: an exact representation of
/// `a + b` with summed ranks.
fn stacked_sum(a: &HbsMatrix, b: &HbsMatrix) -> HbsMatrix {
    let tree = a.tree();
    let mut nodes = Vec::with_capacity(tree.len());
    for id in 0..tree.len() {
        let (na, nb) = (&a.nodes()[id], &b.nodes()[id]);
        let node = match (&na.kind, &nb.kind, tree.node(id).children) {
            (NodeKind::Leaf { d: da }, NodeKind::Leaf { d: db }, None) => HbsNode {
                u: crate::linalg::hstack(&[na.u.as_ref(), nb.u.as_ref()]),
                v: crate::linalg::hstack(&[na.v.as_ref(), nb.v.as_ref()]),
                kind: NodeKind::Leaf { d: da + db },
            },
            (
                NodeKind::Parent { b12: a12, b21: a21 },
                NodeKind::Parent { b12: c12, b21: c21 },
                Some([l, r]),
            ) => {
                let (kal, kbl) = (a.nodes()[l].rank(), b.nodes()[l].rank());
                let (kar, kbr) = (a.nodes()[r].rank(), b.nodes()[r].rank());
                let interleave = |ma: &Mat<f64>, mb: &Mat<f64>| {
                    let top = block_diag(ma.subrows(0, kal), mb.subrows(0, kbl));
                    let bottom = block_diag(ma.subrows(kal, kar), mb.subrows(kbl, kbr));
                    vstack(&[top.as_ref(), bottom.as_ref()])
                };
                HbsNode {
                    u: interleave(&na.u, &nb.u),
                    v: interleave(&na.v, &nb.v),
                    kind: NodeKind::Parent {
                        b12: block_diag(a12.as_ref(), c12.as_ref()),
                        b21: block_diag(a21.as_ref(), c21.as_ref()),
                    },
                }
            }
            _ => unreachable!("trees were checked equal"),
        };
        nodes.push(node);
    }
    HbsMatrix::from_parts(tree.clone(), nodes).expect("stacked shapes are consistent")
}

/// `a + b`, recompressed at `tol`.
pub fn add_hbs(a: &HbsMatrix, b: &HbsMatrix, tol: Tolerance) -> Result<HbsMatrix> {
    if a.tree() != b.tree() {
        return Err(Error::TreeMismatch);
    }
    let floor = noise_floor(a.norm_fro() + b.norm_fro());
    let tol = tol.with_floor(tol.abs.max(floor));
    Ok(recompress(&stacked_sum(a, b), tol))
}

/// Exact HBS form of `q * r` on `tree`.
pub fn lowrank_to_bs(q: MatRef<'_, f64>, r: MatRef<'_, f64>, tree: &IndexTree) -> Result<HbsMatrix> {
    let size = tree.size();
    if q.nrows() != size || r.ncols() != size {
        return Err(Error::DimensionMismatch {
            expected: size,
            got: if q.nrows() != size { q.nrows() } else { r.ncols() },
        });
    }
    if q.ncols() != r.nrows() {
        return Err(Error::DimensionMismatch {
            expected: q.ncols(),
            got: r.nrows(),
        });
    }
    let (q, rq) = crate::linalg::qr_thin(q);
    let r = matmul(rq.as_ref(), r);
    let k = q.ncols();
    let stack_id = || vstack(&[Mat::<f64>::identity(k, k).as_ref(), Mat::<f64>::identity(k, k).as_ref()]);
    let mut nodes = Vec::with_capacity(tree.len());
    for (id, tn) in tree.nodes().iter().enumerate() {
        let node = match tn.children {
            None => {
                let qi = q.subrows(tn.start, tn.len()).to_owned();
                let ri = r.subcols(tn.start, tn.len());
                let d = matmul(qi.as_ref(), ri);
                let (u, v) = if id == 0 {
                    (Mat::zeros(tn.len(), 0), Mat::zeros(tn.len(), 0))
                } else {
                    (qi, ri.transpose().to_owned())
                };
                HbsNode { u, v, kind: NodeKind::Leaf { d } }
            }
            Some(_) => {
                let (u, v) = if id == 0 {
                    (Mat::zeros(2 * k, 0), Mat::zeros(2 * k, 0))
                } else {
                    (stack_id(), stack_id())
                };
                HbsNode {
                    u,
                    v,
                    kind: NodeKind::Parent {
                        b12: Mat::identity(k, k),
                        b21: Mat::identity(k, k),
                    },
                }
            }
        };
        nodes.push(node);
    }
    let mut h = HbsMatrix::from_parts(tree.clone(), nodes)?;
    h.orthonormalize();
    Ok(h)
}

/// `a + q * r`, recompressed at `tol`.
pub fn add_lowrank(a: &HbsMatrix, q: MatRef<'_, f64>, r: MatRef<'_, f64>, tol: Tolerance) -> Result<HbsMatrix> {
    let b = lowrank_to_bs(q, r, a.tree())?;
    add_hbs(a, &b, tol)
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

    fn kernel(n: usize, shift: f64) -> Mat<f64> {
        Mat::from_fn(n, n, |i, j| {
            if i == j {
                shift
            } else {
                1.0 / (1.0 + (i as f64 - j as f64).abs()) + 0.3 / (2.0 + i as f64 + 2.0 * j as f64)
            }
        })
    }

    #[test]
    fn diagonal_only_inverse_is_blockwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d: Vec<_> = (0..3).map(|_| &random(4, 4, &mut rng) + Mat::<f64>::identity(4, 4) * faer::Scale(4.0)).collect();
        let bs = BlockSeparable {
            d: d.clone(),
            u: vec![Mat::zeros(4, 0); 3],
            v: vec![Mat::zeros(4, 0); 3],
            ht: Mat::zeros(0, 0),
        };
        let inv = invert_bs_onelevel(&bs).unwrap();
        for i in 0..3 {
            let want = Lu::factor(d[i].as_ref()).inverse();
            assert!(rel_err(inv.g[i].as_ref(), want.as_ref()) < 1e-14);
        }
    }

    #[test]
    fn singular_block_is_named() {
        let bs = BlockSeparable {
            d: vec![Mat::zeros(2, 2)],
            u: vec![Mat::zeros(2, 0)],
            v: vec![Mat::zeros(2, 0)],
            ht: Mat::zeros(0, 0),
        };
        match invert_bs_onelevel(&bs) {
            Err(Error::Singular { what, .. }) => assert_eq!(what, "D"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multilevel_inverse_and_its_hbs_form() {
        let n = 61;
        let h = kernel(n, 5.0);
        let tree = IndexTree::balanced(n, 8);
        let c = HbsMatrix::compress(h.as_ref(), &tree, Tolerance::relative(1e-13));
        let inv = invert_hbs(&c).unwrap();
        let dense_inv = Lu::factor(c.reconstruct().as_ref()).inverse();
        let x = Mat::from_fn(n, 2, |i, j| ((3 * i + j) as f64).sin());
        let y = inv.apply_inverse_mat(x.as_ref()).unwrap();
        assert!(rel_err(y.as_ref(), (&dense_inv * &x).as_ref()) < 1e-11);
        let yt = inv.apply_inverse_transpose_mat(x.as_ref()).unwrap();
        assert!(rel_err(yt.as_ref(), (dense_inv.transpose() * &x).as_ref()) < 1e-11);
        let as_hbs = inv.to_hbs();
        assert!(as_hbs.orthonormality_defect() < 1e-12);
        assert!(rel_err(as_hbs.reconstruct().as_ref(), dense_inv.as_ref()) < 1e-11);
    }

    #[test]
    fn addition_and_cancellation() {
        let n = 45;
        let tree = IndexTree::balanced(n, 6);
        let tol = Tolerance::relative(1e-10);
        let a = HbsMatrix::compress(kernel(n, 2.0).as_ref(), &tree, tol);
        let b = HbsMatrix::compress(kernel(n, -1.0).transpose(), &tree, tol);
        let s = add_hbs(&a, &b, tol).unwrap();
        let want = &a.reconstruct() + &b.reconstruct();
        assert!(rel_err(s.reconstruct().as_ref(), want.as_ref()) < 1e-9);
        assert!(s.orthonormality_defect() < 1e-12);

        let zero = add_hbs(&a, &a.clone().scaled(-1.0), tol).unwrap();
        assert_eq!(zero.max_rank(), 0);
        assert!(zero.reconstruct().norm_max() < 1e-13);

        let same = add_hbs(&a, &HbsMatrix::zeros(&tree), tol).unwrap();
        assert_eq!(same.ranks(), a.ranks());

        let other = HbsMatrix::zeros(&IndexTree::balanced(n, 5));
        assert!(matches!(add_hbs(&a, &other, tol), Err(Error::TreeMismatch)));
    }

    #[test]
    fn lowrank_conversion_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tree = IndexTree::balanced(16, 4);
        let u = random(16, 1, &mut rng);
        let v = random(1, 16, &mut rng);
        let h = lowrank_to_bs(u.as_ref(), v.as_ref(), &tree).unwrap();
        assert!(h.max_rank() <= 1);
        assert!(rel_err(h.reconstruct().as_ref(), (&u * &v).as_ref()) < 1e-12);

        let z = lowrank_to_bs(Mat::zeros(16, 0).as_ref(), Mat::zeros(0, 16).as_ref(), &tree).unwrap();
        assert_eq!(z.max_rank(), 0);
        assert_eq!(z.reconstruct(), Mat::<f64>::zeros(16, 16));
    }
}
