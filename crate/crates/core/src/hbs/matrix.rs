use faer::{Mat, MatRef};

use super::tree::IndexTree;
use crate::error::{Error, Result};
use crate::linalg::{block_diag, gemm, hstack, matmul, qr_thin, svd_thin, vstack, Tolerance};

/// Factors stored at one tree node.
#[derive(Clone, Debug)]
pub enum NodeKind {
    /// Dense diagonal block.
    Leaf { d: Mat<f64> },
    /// Coupling between the children: `H(I_1, I_2) = U_1 b12 V_2^T` (big bases).
    Parent { b12: Mat<f64>, b21: Mat<f64> },
}

/// `u`/`v` are `rows x rank` where `rows` is the node size at a leaf and the
/// sum of the children's ranks at a parent. The root has rank 0.
#[derive(Clone, Debug)]
pub struct HbsNode {
    pub u: Mat<f64>,
    pub v: Mat<f64>,
    pub kind: NodeKind,
}

impl HbsNode {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn d(&self) -> Option<&Mat<f64>> {
        match &self.kind {
            NodeKind::Leaf { d } => Some(d),
            NodeKind::Parent { .. } => None,
        }
    }

    fn payload_len(&self) -> usize {
        let mats = match &self.kind {
            NodeKind::Leaf { d } => d.nrows() * d.ncols(),
            NodeKind::Parent { b12, b21 } => b12.nrows() * b12.ncols() + b21.nrows() * b21.ncols(),
        };
        mats + self.u.nrows() * self.u.ncols() + self.v.nrows() * self.v.ncols()
    }
}

/// Hierarchically block separable matrix over an [`IndexTree`].
#[derive(Clone, Debug)]
pub struct HbsMatrix {
    pub(crate) tree: IndexTree,
    pub(crate) nodes: Vec<HbsNode>,
}

impl HbsMatrix {
    pub fn from_parts(tree: IndexTree, nodes: Vec<HbsNode>) -> Result<Self> {
        let h = Self { tree, nodes };
        h.check_shapes()?;
        Ok(h)
    }

    pub fn tree(&self) -> &IndexTree {
        &self.tree
    }

    pub fn nodes(&self) -> &[HbsNode] {
        &self.nodes
    }

    pub fn size(&self) -> usize {
        self.tree.size()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.nodes.iter().map(HbsNode::rank).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(0)
    }

    /// Number of stored `f64` values.
    pub fn payload_len(&self) -> usize {
        self.nodes.iter().map(HbsNode::payload_len).sum()
    }

    /// Frobenius norm, exact when all bases are orthonormal.
    pub fn norm_fro(&self) -> f64 {
        let mut acc = 0.0;
        for node in &self.nodes {
            match &node.kind {
                NodeKind::Leaf { d } => acc += d.squared_norm_l2(),
                NodeKind::Parent { b12, b21 } => {
                    acc += b12.squared_norm_l2() + b21.squared_norm_l2()
                }
            }
        }
        acc.sqrt()
    }

    fn rows_of(&self, id: usize) -> usize {
        match self.tree.node(id).children {
            None => self.tree.node(id).len(),
            Some([a, b]) => self.nodes[a].rank() + self.nodes[b].rank(),
        }
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        if self.nodes.len() != self.tree.len() {
            return Err(Error::DimensionMismatch {
                expected: self.tree.len(),
                got: self.nodes.len(),
            });
        }
        let fail = |expected, got| Err(Error::DimensionMismatch { expected, got });
        for (id, node) in self.nodes.iter().enumerate() {
            let rows = self.rows_of(id);
            let k = node.rank();
            if node.u.nrows() != rows {
                return fail(rows, node.u.nrows());
            }
            if node.v.nrows() != rows || node.v.ncols() != k {
                return fail(rows, node.v.nrows());
            }
            if id == 0 && k != 0 {
                return fail(0, k);
            }
            match (&node.kind, self.tree.node(id).children) {
                (NodeKind::Leaf { d }, None) => {
                    if d.nrows() != rows || d.ncols() != rows {
                        return fail(rows, d.nrows());
                    }
                }
                (NodeKind::Parent { b12, b21 }, Some([a, b])) => {
                    let (ka, kb) = (self.nodes[a].rank(), self.nodes[b].rank());
                    if b12.nrows() != ka || b12.ncols() != kb {
                        return fail(ka, b12.nrows());
                    }
                    if b21.nrows() != kb || b21.ncols() != ka {
                        return fail(kb, b21.nrows());
                    }
                }
                _ => return Err(Error::TreeMismatch),
            }
        }
        Ok(())
    }

    /// All-zero matrix on `tree`.
    pub fn zeros(tree: &IndexTree) -> Self {
        Self::from_leaf_blocks(tree, |len, _| Mat::zeros(len, len))
    }

    pub fn identity(tree: &IndexTree) -> Self {
        Self::from_leaf_blocks(tree, |len, _| Mat::identity(len, len))
    }

    pub fn from_diagonal(tree: &IndexTree, diag: &[f64]) -> Self {
        assert_eq!(diag.len(), tree.size());
        Self::from_leaf_blocks(tree, |len, start| {
            Mat::from_fn(len, len, |i, j| if i == j { diag[start + i] } else { 0.0 })
        })
    }

    fn from_leaf_blocks(tree: &IndexTree, block: impl Fn(usize, usize) -> Mat<f64>) -> Self {
        let nodes = tree
            .nodes()
            .iter()
            .map(|n| match n.children {
                None => HbsNode {
                    u: Mat::zeros(n.len(), 0),
                    v: Mat::zeros(n.len(), 0),
                    kind: NodeKind::Leaf { d: block(n.len(), n.start) },
                },
                Some(_) => HbsNode {
                    u: Mat::zeros(0, 0),
                    v: Mat::zeros(0, 0),
                    kind: NodeKind::Parent {
                        b12: Mat::zeros(0, 0),
                        b21: Mat::zeros(0, 0),
                    },
                },
            })
            .collect();
        Self {
            tree: tree.clone(),
            nodes,
        }
    }

    /// Compress a dense matrix: nested bases from truncated SVDs of the
    /// off-diagonal block rows and columns, built leaves first.
    pub fn compress(h: MatRef<'_, f64>, tree: &IndexTree, tol: Tolerance) -> Self {
        assert_eq!(h.nrows(), tree.size(), "matrix does not match tree");
        assert_eq!(h.ncols(), tree.size(), "matrix does not match tree");
        let count = tree.len();
        let size = tree.size();
        let mut nodes: Vec<Option<HbsNode>> = vec![None; count];
        // Projected block rows U_big^T H(I, :) and columns (H(:, I) V_big)^T,
        // dropped once the parent has consumed them.
        let mut proj_row: Vec<Option<Mat<f64>>> = vec![None; count];
        let mut proj_col: Vec<Option<Mat<f64>>> = vec![None; count];
        let mut vbig: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
        let ht = h.transpose();

        for id in (0..count).rev() {
            let tn = tree.node(id).clone();
            let (full_row, full_col, kind) = match tn.children {
                None => {
                    let d = h.submatrix(tn.start, tn.start, tn.len(), tn.len()).to_owned();
                    (
                        h.subrows(tn.start, tn.len()).to_owned(),
                        ht.subrows(tn.start, tn.len()).to_owned(),
                        NodeKind::Leaf { d },
                    )
                }
                Some([a, b]) => {
                    let (ra, rb) = (proj_row[a].take().unwrap(), proj_row[b].take().unwrap());
                    let (ca, cb) = (proj_col[a].take().unwrap(), proj_col[b].take().unwrap());
                    let (na, nb) = (tree.node(a), tree.node(b));
                    let b12 = matmul(ra.subcols(nb.start, nb.len()), vbig[b].as_ref());
                    let b21 = matmul(rb.subcols(na.start, na.len()), vbig[a].as_ref());
                    (
                        vstack(&[ra.as_ref(), rb.as_ref()]),
                        vstack(&[ca.as_ref(), cb.as_ref()]),
                        NodeKind::Parent { b12, b21 },
                    )
                }
            };
            if id == 0 {
                let rows = full_row.nrows();
                nodes[0] = Some(HbsNode {
                    u: Mat::zeros(rows, 0),
                    v: Mat::zeros(rows, 0),
                    kind,
                });
                break;
            }
            let off = |m: &Mat<f64>| {
                hstack(&[
                    m.subcols(0, tn.start),
                    m.subcols(tn.end, size - tn.end),
                ])
            };
            let (wu, su, _) = svd_thin(off(&full_row).as_ref());
            let (wv, sv, _) = svd_thin(off(&full_col).as_ref());
            let k = tol.rank(&su).max(tol.rank(&sv));
            let u = wu.subcols(0, k).to_owned();
            let v = wv.subcols(0, k).to_owned();
            proj_row[id] = Some(matmul(u.transpose(), full_row.as_ref()));
            proj_col[id] = Some(matmul(v.transpose(), full_col.as_ref()));
            match tn.children {
                None => vbig[id] = v.clone(),
                Some([a, b]) => {
                    vbig[id] = matmul(block_diag(vbig[a].as_ref(), vbig[b].as_ref()).as_ref(), v.as_ref());
                    vbig[a] = Mat::zeros(0, 0);
                    vbig[b] = Mat::zeros(0, 0);
                }
            }
            nodes[id] = Some(HbsNode { u, v, kind });
        }
        Self {
            tree: tree.clone(),
            nodes: nodes.into_iter().map(Option::unwrap).collect(),
        }
    }

    /// Column bases expanded to full index ranges, for every node.
    fn big_bases(&self, transpose: bool) -> Vec<Mat<f64>> {
        let mut big = vec![Mat::zeros(0, 0); self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            let basis = if transpose { &node.v } else { &node.u };
            big[id] = match self.tree.node(id).children {
                None => basis.clone(),
                Some([a, b]) => matmul(block_diag(big[a].as_ref(), big[b].as_ref()).as_ref(), basis.as_ref()),
            };
        }
        big
    }

    /// Dense matrix represented by the factors.
    pub fn reconstruct(&self) -> Mat<f64> {
        let size = self.size();
        let mut out = Mat::zeros(size, size);
        let ub = self.big_bases(false);
        let vb = self.big_bases(true);
        for (id, node) in self.nodes.iter().enumerate() {
            let tn = self.tree.node(id);
            match (&node.kind, tn.children) {
                (NodeKind::Leaf { d }, _) => {
                    out.as_mut().submatrix_mut(tn.start, tn.start, tn.len(), tn.len()).copy_from(d);
                }
                (NodeKind::Parent { b12, b21 }, Some([a, b])) => {
                    let (na, nb) = (self.tree.node(a), self.tree.node(b));
                    let blk = matmul(matmul(ub[a].as_ref(), b12.as_ref()).as_ref(), vb[b].transpose());
                    out.as_mut().submatrix_mut(na.start, nb.start, na.len(), nb.len()).copy_from(&blk);
                    let blk = matmul(matmul(ub[b].as_ref(), b21.as_ref()).as_ref(), vb[a].transpose());
                    out.as_mut().submatrix_mut(nb.start, na.start, nb.len(), na.len()).copy_from(&blk);
                }
                _ => unreachable!(),
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.apply_mat(crate::linalg::col(x).as_ref())?;
        Ok(crate::linalg::to_vec(y.as_ref()))
    }

    /// `H x` for a block of vectors.
    pub fn apply_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.telescope(x, false)
    }

    /// `H^T x`.
    pub fn apply_transpose_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.telescope(x, true)
    }

    fn telescope(&self, x: MatRef<'_, f64>, transpose: bool) -> Result<Mat<f64>> {
        if x.nrows() != self.size() {
            return Err(Error::DimensionMismatch {
                expected: self.size(),
                got: x.nrows(),
            });
        }
        let c = x.ncols();
        let count = self.nodes.len();
        let mut xhat: Vec<Mat<f64>> = vec![Mat::zeros(0, c); count];
        for id in (1..count).rev() {
            let node = &self.nodes[id];
            let tn = self.tree.node(id);
            let stacked;
            let src = match tn.children {
                None => x.subrows(tn.start, tn.len()),
                Some([a, b]) => {
                    stacked = vstack(&[xhat[a].as_ref(), xhat[b].as_ref()]);
                    stacked.as_ref()
                }
            };
            xhat[id] = matmul(bases(node, transpose).1.transpose(), src);
        }
        let mut yhat: Vec<Mat<f64>> = (0..count).map(|i| Mat::zeros(self.nodes[i].rank(), c)).collect();
        let mut y = Mat::zeros(self.size(), c);
        for id in 0..count {
            let node = &self.nodes[id];
            let tn = self.tree.node(id);
            match (&node.kind, tn.children) {
                (NodeKind::Parent { b12, b21 }, Some([a, b])) => {
                    let (c12, c21) = if transpose {
                        (b21.transpose(), b12.transpose())
                    } else {
                        (b12.as_ref(), b21.as_ref())
                    };
                    let ka = self.nodes[a].rank();
                    let kb = self.nodes[b].rank();
                    let down = matmul(bases(node, transpose).0.as_ref(), yhat[id].as_ref());
                    let mut ya = down.subrows(0, ka).to_owned();
                    let mut yb = down.subrows(ka, kb).to_owned();
                    gemm(ya.as_mut(), 1.0, c12, xhat[b].as_ref());
                    gemm(yb.as_mut(), 1.0, c21, xhat[a].as_ref());
                    yhat[a] = ya;
                    yhat[b] = yb;
                }
                (NodeKind::Leaf { d }, None) => {
                    let dd = if transpose { d.transpose() } else { d.as_ref() };
                    let mut blk = matmul(bases(node, transpose).0.as_ref(), yhat[id].as_ref());
                    gemm(blk.as_mut(), 1.0, dd, x.subrows(tn.start, tn.len()));
                    y.as_mut().subrows_mut(tn.start, tn.len()).copy_from(&blk);
                }
                _ => unreachable!(),
            }
        }
        Ok(y)
    }

    /// Re-express every basis with orthonormal columns, pushing the
    /// triangular factors into the parents. Exact up to roundoff; ranks only
    /// shrink when a basis has more columns than rows.
    pub fn orthonormalize(&mut self) {
        let count = self.nodes.len();
        let mut ru: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
        let mut rv: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
        for id in (0..count).rev() {
            let children = self.tree.node(id).children;
            if let Some([a, b]) = children {
                let (rua, rub, rva, rvb) = (&ru[a], &ru[b], &rv[a], &rv[b]);
                let node = &mut self.nodes[id];
                if let NodeKind::Parent { b12, b21 } = &mut node.kind {
                    *b12 = matmul(matmul(rua.as_ref(), b12.as_ref()).as_ref(), rvb.transpose());
                    *b21 = matmul(matmul(rub.as_ref(), b21.as_ref()).as_ref(), rva.transpose());
                }
                node.u = matmul(block_diag(rua.as_ref(), rub.as_ref()).as_ref(), node.u.as_ref());
                node.v = matmul(block_diag(rva.as_ref(), rvb.as_ref()).as_ref(), node.v.as_ref());
            }
            if id == 0 {
                let rows = self.nodes[0].u.nrows();
                self.nodes[0].u = Mat::zeros(rows, 0);
                self.nodes[0].v = Mat::zeros(rows, 0);
                break;
            }
            let node = &mut self.nodes[id];
            let (qu, r_u) = qr_thin(node.u.as_ref());
            let (qv, r_v) = qr_thin(node.v.as_ref());
            debug_assert_eq!(qu.ncols(), qv.ncols());
            node.u = qu;
            node.v = qv;
            ru[id] = r_u;
            rv[id] = r_v;
        }
    }

    /// The same matrix with one orthonormal nested basis per node serving as
    /// both row and column basis, spanning the old `U` and `V` (directions
    /// below `tol` of the joint span are dropped).
    ///
    /// Woodbury inversion needs `V^T D^-1 U` invertible at every node. With
    /// `U = V` that is guaranteed whenever the symmetric part of `H` is
    /// definite, which holds for convection-diffusion Schur complements but
    /// not for their independently compressed bases.
    pub fn shared_bases(&self, tol: Tolerance) -> Self {
        let count = self.nodes.len();
        // Old bases in terms of the new ones: U_old = W P, V_old = W Q.
        let mut p: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
        let mut q: Vec<Mat<f64>> = vec![Mat::zeros(0, 0); count];
        let mut nodes = self.nodes.clone();
        for id in (0..count).rev() {
            let node = &mut nodes[id];
            let (x, y) = match self.tree.node(id).children {
                None => (node.u.clone(), node.v.clone()),
                Some([a, b]) => {
                    if let NodeKind::Parent { b12, b21 } = &mut node.kind {
                        *b12 = matmul(matmul(p[a].as_ref(), b12.as_ref()).as_ref(), q[b].transpose());
                        *b21 = matmul(matmul(p[b].as_ref(), b21.as_ref()).as_ref(), q[a].transpose());
                    }
                    (
                        matmul(block_diag(p[a].as_ref(), p[b].as_ref()).as_ref(), node.u.as_ref()),
                        matmul(block_diag(q[a].as_ref(), q[b].as_ref()).as_ref(), node.v.as_ref()),
                    )
                }
            };
            if id == 0 {
                node.u = Mat::zeros(x.nrows(), 0);
                node.v = Mat::zeros(x.nrows(), 0);
                break;
            }
            let (qx, _) = qr_thin(x.as_ref());
            let (qy, _) = qr_thin(y.as_ref());
            let (w, s, _) = svd_thin(hstack(&[qx.as_ref(), qy.as_ref()]).as_ref());
            let w = w.subcols(0, tol.rank(&s)).to_owned();
            p[id] = matmul(w.transpose(), x.as_ref());
            q[id] = matmul(w.transpose(), y.as_ref());
            node.v = w.clone();
            node.u = w;
        }
        Self {
            tree: self.tree.clone(),
            nodes,
        }
    }

    /// `alpha * H`.
    pub fn scaled(mut self, alpha: f64) -> Self {
        for node in &mut self.nodes {
            match &mut node.kind {
                NodeKind::Leaf { d } => *d *= faer::Scale(alpha),
                NodeKind::Parent { b12, b21 } => {
                    *b12 *= faer::Scale(alpha);
                    *b21 *= faer::Scale(alpha);
                }
            }
        }
        self
    }

    /// `diag(left) * H * diag(right)`, with bases re-orthonormalized.
    pub fn diag_scaled(mut self, left: &[f64], right: &[f64]) -> Self {
        assert_eq!(left.len(), self.size());
        assert_eq!(right.len(), self.size());
        for id in self.tree.leaves().collect::<Vec<_>>() {
            let tn = self.tree.node(id).clone();
            let l = &left[tn.range()];
            let r = &right[tn.range()];
            let node = &mut self.nodes[id];
            node.u = crate::linalg::scale_rows(node.u.as_ref(), l);
            node.v = crate::linalg::scale_rows(node.v.as_ref(), r);
            if let NodeKind::Leaf { d } = &mut node.kind {
                *d = Mat::from_fn(d.nrows(), d.ncols(), |i, j| l[i] * d[(i, j)] * r[j]);
            }
        }
        self.orthonormalize();
        self
    }

    /// `J H J` with `J` the index-reversing permutation, on the mirrored tree.
    pub fn mirrored(&self) -> Self {
        let tree = self.tree.mirrored();
        let map = self.tree.mirror_map();
        let mut nodes: Vec<Option<HbsNode>> = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            let new = match (&node.kind, self.tree.node(id).children) {
                (NodeKind::Leaf { d }, _) => HbsNode {
                    u: node.u.as_ref().reverse_rows().to_owned(),
                    v: node.v.as_ref().reverse_rows().to_owned(),
                    kind: NodeKind::Leaf {
                        d: d.as_ref().reverse_rows_and_cols().to_owned(),
                    },
                },
                (NodeKind::Parent { b12, b21 }, Some([a, _])) => {
                    let ka = self.nodes[a].rank();
                    let swap = |m: &Mat<f64>| {
                        let kb = m.nrows() - ka;
                        vstack(&[m.subrows(ka, kb), m.subrows(0, ka)])
                    };
                    HbsNode {
                        u: swap(&node.u),
                        v: swap(&node.v),
                        kind: NodeKind::Parent {
                            b12: b21.clone(),
                            b21: b12.clone(),
                        },
                    }
                }
                _ => unreachable!(),
            };
            nodes[map[id]] = Some(new);
        }
        Self {
            tree,
            nodes: nodes.into_iter().map(Option::unwrap).collect(),
        }
    }

    /// `diag(a, b)` on the joined tree.
    pub fn block_diag(a: &HbsMatrix, b: &HbsMatrix) -> Self {
        let tree = IndexTree::join(&a.tree, &b.tree);
        let mut nodes = Vec::with_capacity(tree.len());
        nodes.push(HbsNode {
            u: Mat::zeros(0, 0),
            v: Mat::zeros(0, 0),
            kind: NodeKind::Parent {
                b12: Mat::zeros(0, 0),
                b21: Mat::zeros(0, 0),
            },
        });
        nodes.extend(a.nodes.iter().cloned());
        nodes.extend(b.nodes.iter().cloned());
        Self { tree, nodes }
    }

    /// Largest deviation of `U^T U` and `V^T V` from the identity over all nodes.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for node in &self.nodes {
            for m in [&node.u, &node.v] {
                let g = m.transpose() * m;
                for i in 0..g.nrows() {
                    for j in 0..g.ncols() {
                        let want = if i == j { 1.0 } else { 0.0 };
                        worst = worst.max((g[(i, j)] - want).abs());
                    }
                }
            }
        }
        worst
    }
}

fn bases(node: &HbsNode, transpose: bool) -> (&Mat<f64>, &Mat<f64>) {
    if transpose {
        (&node.v, &node.u)
    } else {
        (&node.u, &node.v)
    }
}
