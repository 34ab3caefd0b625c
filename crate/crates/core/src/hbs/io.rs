//! Binary layouts. All integers are little-endian `u64`, all values
//! little-endian `f64`, matrices row-major.
//!
//! HBS matrix:
//!
//! ```text
//! b"HBS1"
//! size, node_count
//! node_count x { start, end, left_child, right_child, rank }   (pre-order;
//!                                       children are u64::MAX at a leaf)
//! node_count x payload                                        (pre-order)
//!     leaf:   D (len x len), U (len x rank), V (len x rank)
//!     parent: B12 (k1 x k2), B21 (k2 x k1), U (k1+k2 x rank), V (k1+k2 x rank)
//! ```
//!
//! Dense matrix: `rows, cols`, then the values.

use std::io::{Read, Write};

use faer::{Mat, MatRef};

use super::matrix::{HbsMatrix, HbsNode, NodeKind};
use super::tree::{IndexTree, TreeNode};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HBS1";
const NONE: u64 = u64::MAX;

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_usize(r: &mut impl Read) -> Result<usize> {
    usize::try_from(get_u64(r)?).map_err(|_| Error::Parse("index does not fit usize".into()))
}

fn put_values(w: &mut impl Write, m: MatRef<'_, f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_values(r: &mut impl Read, rows: usize, cols: usize) -> Result<Mat<f64>> {
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Parse("matrix dimensions overflow".into()))?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Mat::from_fn(rows, cols, |i, j| {
        let at = 8 * (i * cols + j);
        f64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
    }))
}

pub fn write_dense(w: &mut impl Write, m: MatRef<'_, f64>) -> Result<()> {
    put_u64(w, m.nrows() as u64)?;
    put_u64(w, m.ncols() as u64)?;
    put_values(w, m)
}

pub fn read_dense(r: &mut impl Read) -> Result<Mat<f64>> {
    let rows = get_usize(r)?;
    let cols = get_usize(r)?;
    get_values(r, rows, cols)
}

pub fn write_hbs(w: &mut impl Write, h: &HbsMatrix) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u64(w, h.size() as u64)?;
    put_u64(w, h.tree().len() as u64)?;
    for (tn, node) in h.tree().nodes().iter().zip(h.nodes()) {
        put_u64(w, tn.start as u64)?;
        put_u64(w, tn.end as u64)?;
        let [a, b] = tn.children.map_or([NONE; 2], |[a, b]| [a as u64, b as u64]);
        put_u64(w, a)?;
        put_u64(w, b)?;
        put_u64(w, node.rank() as u64)?;
    }
    for node in h.nodes() {
        match &node.kind {
            NodeKind::Leaf { d } => put_values(w, d.as_ref())?,
            NodeKind::Parent { b12, b21 } => {
                put_values(w, b12.as_ref())?;
                put_values(w, b21.as_ref())?;
            }
        }
        put_values(w, node.u.as_ref())?;
        put_values(w, node.v.as_ref())?;
    }
    Ok(())
}

/// Size in bytes of [`write_hbs`] output.
pub fn hbs_encoded_len(h: &HbsMatrix) -> usize {
    4 + 16 + 40 * h.tree().len() + 8 * h.payload_len()
}

pub fn read_hbs(r: &mut impl Read) -> Result<HbsMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not an HBS1 stream".into()));
    }
    let size = get_usize(r)?;
    let count = get_usize(r)?;
    if count == 0 {
        return Err(Error::Parse("empty node table".into()));
    }
    let mut table = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let start = get_usize(r)?;
        let end = get_usize(r)?;
        let a = get_u64(r)?;
        let b = get_u64(r)?;
        let rank = get_usize(r)?;
        let children = match (a, b) {
            (NONE, NONE) => None,
            (a, b) if (a as usize) < count && (b as usize) < count => Some([a as usize, b as usize]),
            _ => return Err(Error::Parse("child index out of range".into())),
        };
        table.push((start, end, children, rank));
    }
    let mut nodes: Vec<TreeNode> = table
        .iter()
        .map(|&(start, end, children, _)| TreeNode {
            start,
            end,
            parent: None,
            children,
            level: 0,
        })
        .collect();
    for id in 0..count {
        if let Some([a, b]) = nodes[id].children {
            if a <= id || b <= id || nodes[a].parent.is_some() || nodes[b].parent.is_some() {
                return Err(Error::Parse("node table is not a pre-order tree".into()));
            }
            let level = nodes[id].level + 1;
            for c in [a, b] {
                nodes[c].parent = Some(id);
                nodes[c].level = level;
            }
        }
    }
    let tree = IndexTree::from_nodes(nodes).ok_or_else(|| Error::Parse("inconsistent index ranges".into()))?;
    if tree.size() != size {
        return Err(Error::Parse("size header disagrees with the root range".into()));
    }
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let tn = tree.node(id);
        let rank = table[id].3;
        let (kind, rows) = match tn.children {
            None => (
                NodeKind::Leaf {
                    d: get_values(r, tn.len(), tn.len())?,
                },
                tn.len(),
            ),
            Some([a, b]) => {
                let (ka, kb) = (table[a].3, table[b].3);
                let b12 = get_values(r, ka, kb)?;
                let b21 = get_values(r, kb, ka)?;
                (NodeKind::Parent { b12, b21 }, ka + kb)
            }
        };
        let u = get_values(r, rows, rank)?;
        let v = get_values(r, rows, rank)?;
        out.push(HbsNode { u, v, kind });
    }
    HbsMatrix::from_parts(tree, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Tolerance;

    #[test]
    fn dense_layout_is_header_then_row_major() {
        let m = Mat::from_fn(2, 3, |i, j| (10 * i + j) as f64);
        let mut buf = Vec::new();
        write_dense(&mut buf, m.as_ref()).unwrap();
        assert_eq!(buf.len(), 16 + 48);
        assert_eq!(&buf[0..8], &2u64.to_le_bytes());
        assert_eq!(&buf[16 + 8..16 + 16], &1.0f64.to_le_bytes());
        let back = read_dense(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn hbs_round_trip_is_exact_and_stable() {
        let n = 37;
        let h = Mat::from_fn(n, n, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
        let tree = IndexTree::balanced(n, 6);
        let a = HbsMatrix::compress(h.as_ref(), &tree, Tolerance::relative(1e-8));
        let mut buf = Vec::new();
        write_hbs(&mut buf, &a).unwrap();
        assert_eq!(buf.len(), hbs_encoded_len(&a));
        let b = read_hbs(&mut buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_hbs(&mut again, &b).unwrap();
        assert_eq!(buf, again);
        assert_eq!(a.reconstruct(), b.reconstruct());
        assert!(read_hbs(&mut &buf[..buf.len() - 1]).is_err());
        assert!(read_hbs(&mut &b"HBS0xxxxxxxx"[..]).is_err());
    }
}
