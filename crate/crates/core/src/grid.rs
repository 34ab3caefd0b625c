//! Five-point discretization on the unit square and the quadtree of boxes.
//!
//! Grid nodes are `(i, j)` with `0 <= i, j < n`; the outer ring carries
//! Dirichlet data and the `(n-2)^2` interior nodes are the unknowns. Unknown
//! `(p, q)` sits at grid node `(p + 1, q + 1)` and has id `q * side + p`.

use std::fmt;
use std::sync::Arc;

use faer::sparse::Triplet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Field = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A scalar coefficient field on the unit square.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Field(Field),
}

impl Coefficient {
    pub fn zero() -> Self {
        Coefficient::Constant(0.0)
    }

    pub fn field(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Field(Arc::new(f))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Field(f) => f(x, y),
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(v) => write!(f, "Constant({v})"),
            Coefficient::Field(_) => f.write_str("Field(..)"),
        }
    }
}

/// Link conductivities of a resistor network on the full `n x n` grid.
///
/// Horizontal link `(i, j)-(i+1, j)` is stored at `j * (n - 1) + i`,
/// vertical link `(i, j)-(i, j+1)` at `j * n + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conductivities {
    pub n: usize,
    pub range: (f64, f64),
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
}

impl Conductivities {
    pub fn uniform(n: usize, value: f64) -> Self {
        Self {
            n,
            range: (value, value),
            horizontal: vec![value; (n - 1) * n],
            vertical: vec![value; n * (n - 1)],
        }
    }

    /// Conductivities drawn uniformly from `[lo, hi]`.
    pub fn random(n: usize, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(lo..=hi)).collect()
        };
        let horizontal = draw((n - 1) * n);
        let vertical = draw(n * (n - 1));
        Self {
            n,
            range: (lo, hi),
            horizontal,
            vertical,
        }
    }

    /// Conductivity of the link from grid node `(i, j)` towards `dir`.
    pub fn link(&self, i: usize, j: usize, dir: Dir) -> f64 {
        let n = self.n;
        match dir {
            Dir::East => self.horizontal[j * (n - 1) + i],
            Dir::West => self.horizontal[j * (n - 1) + i - 1],
            Dir::North => self.vertical[j * n + i],
            Dir::South => self.vertical[(j - 1) * n + i],
        }
    }
}

#[derive(Clone, Debug)]
pub enum Mode {
    /// `-Laplace u + b u_x + c u_y + d u` discretized on the grid.
    Continuum {
        b: Coefficient,
        c: Coefficient,
        d: Coefficient,
    },
    /// Equilibrium of a resistor network with the given link conductivities.
    Network(Conductivities),
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    /// Grid points per side, including the Dirichlet ring.
    pub n: usize,
    pub mode: Mode,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn continuum(name: &str, n: usize, b: Coefficient, c: Coefficient, d: Coefficient) -> Self {
        Self {
            name: name.to_string(),
            n,
            mode: Mode::Continuum { b, c, d },
            seed: 0,
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 - 1.0)
    }

    /// Unknowns per side.
    pub fn side(&self) -> usize {
        self.n.saturating_sub(2)
    }

    pub fn num_unknowns(&self) -> usize {
        self.side() * self.side()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dir {
    East,
    North,
    West,
    South,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::East, Dir::North, Dir::West, Dir::South];

    fn offset(self) -> (isize, isize) {
        match self {
            Dir::East => (1, 0),
            Dir::North => (0, 1),
            Dir::West => (-1, 0),
            Dir::South => (0, -1),
        }
    }
}

/// Where a stencil neighbor lives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Neighbor {
    Unknown(usize),
    /// A Dirichlet node, given by full-grid coordinates.
    Dirichlet(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilRow {
    pub center: usize,
    pub diagonal: f64,
    pub entries: Vec<(Neighbor, f64)>,
}

/// One coefficient multiplying a prescribed Dirichlet value in an unknown's row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Forcing {
    pub row: usize,
    pub grid_node: (usize, usize),
    pub coefficient: f64,
}

/// The assembled five-point operator over the unknowns.
#[derive(Clone, Debug)]
pub struct Operator {
    side: usize,
    n: usize,
    h: f64,
    center: Vec<f64>,
    /// Neighbor coefficients indexed like `Dir::ALL`.
    neighbor: [Vec<f64>; 4],
}

pub fn discretize(spec: &ProblemSpec) -> Result<Operator> {
    let n = spec.n;
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 4 points per side, got {n}"
        )));
    }
    let side = n - 2;
    let h = spec.h();
    let count = side * side;
    let mut center = vec![0.0; count];
    let mut neighbor = [
        vec![0.0; count],
        vec![0.0; count],
        vec![0.0; count],
        vec![0.0; count],
    ];

    match &spec.mode {
        Mode::Continuum { b, c, d } => {
            let inv_h2 = 1.0 / (h * h);
            let inv_h = 1.0 / h;
            for q in 0..side {
                for p in 0..side {
                    let (i, j) = (p + 1, q + 1);
                    let (x, y) = (i as f64 * h, j as f64 * h);
                    let bv = checked("b", b.eval(x, y), i, j)?;
                    let cv = checked("c", c.eval(x, y), i, j)?;
                    let dv = checked("d", d.eval(x, y), i, j)?;
                    let k = q * side + p;
                    center[k] = 4.0 * inv_h2 + dv;
                    neighbor[0][k] = -inv_h2 + inv_h * bv;
                    neighbor[1][k] = -inv_h2 + inv_h * cv;
                    neighbor[2][k] = -inv_h2 - inv_h * bv;
                    neighbor[3][k] = -inv_h2 - inv_h * cv;
                }
            }
        }
        Mode::Network(cond) => {
            if cond.n != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: cond.n,
                });
            }
            for q in 0..side {
                for p in 0..side {
                    let (i, j) = (p + 1, q + 1);
                    let k = q * side + p;
                    let mut sum = 0.0;
                    for (slot, dir) in Dir::ALL.iter().enumerate() {
                        let g = checked("conductivity", cond.link(i, j, *dir), i, j)?;
                        if !(g > 0.0) {
                            return Err(Error::InvalidArgument(format!(
                                "conductivity {g} at grid node ({i}, {j}) is not positive"
                            )));
                        }
                        sum += g;
                        neighbor[slot][k] = -g;
                    }
                    center[k] = sum;
                }
            }
        }
    }

    Ok(Operator {
        side,
        n,
        h,
        center,
        neighbor,
    })
}

fn checked(field: &'static str, v: f64, i: usize, j: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteCoefficient { field, i, j })
    }
}

impl Operator {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.side, k / self.side)
    }

    pub fn id(&self, p: usize, q: usize) -> usize {
        q * self.side + p
    }

    fn step(&self, k: usize, dir: Dir) -> Neighbor {
        let (p, q) = self.coords(k);
        let (dp, dq) = dir.offset();
        let (pp, qq) = (p as isize + dp, q as isize + dq);
        let s = self.side as isize;
        if (0..s).contains(&pp) && (0..s).contains(&qq) {
            Neighbor::Unknown(qq as usize * self.side + pp as usize)
        } else {
            Neighbor::Dirichlet((pp + 1) as usize, (qq + 1) as usize)
        }
    }

    /// Unknown neighbor of `k` in direction `dir`, if any.
    pub fn neighbor(&self, k: usize, dir: Dir) -> Option<usize> {
        match self.step(k, dir) {
            Neighbor::Unknown(j) => Some(j),
            Neighbor::Dirichlet(..) => None,
        }
    }

    pub fn diagonal(&self, k: usize) -> f64 {
        self.center[k]
    }

    pub fn neighbor_coefficient(&self, k: usize, dir: Dir) -> f64 {
        let slot = Dir::ALL.iter().position(|d| *d == dir).unwrap();
        self.neighbor[slot][k]
    }

    pub fn row(&self, k: usize) -> StencilRow {
        let entries = Dir::ALL
            .iter()
            .enumerate()
            .map(|(slot, dir)| (self.step(k, *dir), self.neighbor[slot][k]))
            .collect();
        StencilRow {
            center: k,
            diagonal: self.center[k],
            entries,
        }
    }

    /// Matrix entry `A[row, col]`.
    pub fn coupling(&self, row: usize, col: usize) -> f64 {
        if row == col {
            return self.center[row];
        }
        for (slot, dir) in Dir::ALL.iter().enumerate() {
            if self.neighbor(row, *dir) == Some(col) {
                return self.neighbor[slot][row];
            }
        }
        0.0
    }

    /// Coefficients that multiply prescribed Dirichlet values.
    pub fn forcing(&self) -> Vec<Forcing> {
        let mut out = Vec::new();
        for k in 0..self.len() {
            for (slot, dir) in Dir::ALL.iter().enumerate() {
                if let Neighbor::Dirichlet(i, j) = self.step(k, *dir) {
                    out.push(Forcing {
                        row: k,
                        grid_node: (i, j),
                        coefficient: self.neighbor[slot][k],
                    });
                }
            }
        }
        out
    }

    /// Right-hand side contribution `-A_bd g` of Dirichlet data `g(i, j)`.
    pub fn dirichlet_rhs(&self, g: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut rhs = vec![0.0; self.len()];
        for f in self.forcing() {
            rhs[f.row] -= f.coefficient * g(f.grid_node.0, f.grid_node.1);
        }
        rhs
    }

    pub fn triplets(&self) -> Vec<Triplet<usize, usize, f64>> {
        let mut out = Vec::with_capacity(5 * self.len());
        for k in 0..self.len() {
            out.push(Triplet::new(k, k, self.center[k]));
            for (slot, dir) in Dir::ALL.iter().enumerate() {
                if let Some(j) = self.neighbor(k, *dir) {
                    out.push(Triplet::new(k, j, self.neighbor[slot][k]));
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.len());
        (0..self.len())
            .map(|k| {
                let mut acc = self.center[k] * x[k];
                for (slot, dir) in Dir::ALL.iter().enumerate() {
                    if let Some(j) = self.neighbor(k, *dir) {
                        acc += self.neighbor[slot][k] * x[j];
                    }
                }
                acc
            })
            .collect()
    }

    /// Dense block `A[rows, cols]`, built from stencil lookups.
    pub fn dense_block(&self, rows: &[usize], cols: &[usize]) -> faer::Mat<f64> {
        let index = IndexMap::new(cols);
        let mut out = faer::Mat::zeros(rows.len(), cols.len());
        for (r, &k) in rows.iter().enumerate() {
            if let Some(c) = index.get(k) {
                out[(r, c)] = self.center[k];
            }
            for (slot, dir) in Dir::ALL.iter().enumerate() {
                if let Some(j) = self.neighbor(k, *dir) {
                    if let Some(c) = index.get(j) {
                        out[(r, c)] = self.neighbor[slot][k];
                    }
                }
            }
        }
        out
    }
}

/// Position lookup for a list of distinct node ids.
pub(crate) struct IndexMap {
    map: std::collections::HashMap<usize, usize>,
}

impl IndexMap {
    pub fn new(ids: &[usize]) -> Self {
        Self {
            map: ids.iter().enumerate().map(|(pos, &id)| (id, pos)).collect(),
        }
    }

    pub fn get(&self, id: usize) -> Option<usize> {
        self.map.get(&id).copied()
    }
}

/// An axis-aligned rectangle of unknowns: `x0 <= p < x0 + w`, `y0 <= q < y0 + h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoxGeom {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl BoxGeom {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(w > 0 && h > 0, "empty box");
        Self { x0, y0, w, h }
    }

    pub fn len(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn x1(&self) -> usize {
        self.x0 + self.w - 1
    }

    fn y1(&self) -> usize {
        self.y0 + self.h - 1
    }

    pub fn contains(&self, p: usize, q: usize) -> bool {
        p >= self.x0 && p <= self.x1() && q >= self.y0 && q <= self.y1()
    }

    pub fn boundary_len(&self) -> usize {
        if self.w == 1 || self.h == 1 {
            self.len()
        } else {
            2 * (self.w + self.h) - 4
        }
    }

    /// Position of unknown `(p, q)` in the perimeter ordering, if it lies on
    /// the perimeter.
    pub fn boundary_position(&self, p: usize, q: usize) -> Option<usize> {
        if !self.contains(p, q) {
            return None;
        }
        let (w, h) = (self.w, self.h);
        if q == self.y0 {
            Some(p - self.x0)
        } else if q == self.y1() {
            Some(w + (h - 2) + (self.x1() - p))
        } else if p == self.x1() {
            Some(w + (q - self.y0 - 1))
        } else if p == self.x0 {
            Some(2 * w + (h - 2) + (self.y1() - 1 - q))
        } else {
            None
        }
    }

    /// Perimeter nodes, counterclockwise from the southwest corner.
    pub fn perimeter_coords(&self) -> Vec<(usize, usize)> {
        if self.h == 1 {
            return (self.x0..=self.x1()).map(|p| (p, self.y0)).collect();
        }
        if self.w == 1 {
            return (self.y0..=self.y1()).map(|q| (self.x0, q)).collect();
        }
        let mut out = Vec::with_capacity(self.boundary_len());
        out.extend((self.x0..=self.x1()).map(|p| (p, self.y0)));
        out.extend((self.y0 + 1..self.y1()).map(|q| (self.x1(), q)));
        out.extend((self.x0..=self.x1()).rev().map(|p| (p, self.y1())));
        out.extend((self.y0 + 1..self.y1()).rev().map(|q| (self.x0, q)));
        out
    }

    pub fn perimeter(&self, side: usize) -> Vec<usize> {
        self.perimeter_coords()
            .into_iter()
            .map(|(p, q)| q * side + p)
            .collect()
    }

    /// Nodes with all four neighbors inside the box, row by row.
    pub fn interior(&self, side: usize) -> Vec<usize> {
        if self.w < 3 || self.h < 3 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity((self.w - 2) * (self.h - 2));
        for q in self.y0 + 1..self.y1() {
            for p in self.x0 + 1..self.x1() {
                out.push(q * side + p);
            }
        }
        out
    }

    pub fn nodes(&self, side: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for q in self.y0..=self.y1() {
            for p in self.x0..=self.x1() {
                out.push(q * side + p);
            }
        }
        out
    }

    /// Lengths of the eight perimeter segments: SW corner, south edge, SE
    /// corner, east edge, NE corner, north edge, NW corner, west edge.
    /// Requires `w, h >= 2`.
    pub fn segment_lengths(&self) -> [usize; 8] {
        assert!(self.w >= 2 && self.h >= 2, "segments need a 2x2 box");
        let (ew, eh) = (self.w - 2, self.h - 2);
        [1, ew, 1, eh, 1, ew, 1, eh]
    }

    /// Split into `[SW, SE, NW, NE]`; west and south halves take the extra node.
    pub fn quadrants(&self) -> [BoxGeom; 4] {
        let wl = self.w.div_ceil(2);
        let hl = self.h.div_ceil(2);
        let (wr, hr) = (self.w - wl, self.h - hl);
        let (xm, ym) = (self.x0 + wl, self.y0 + hl);
        [
            BoxGeom::new(self.x0, self.y0, wl, hl),
            BoxGeom::new(xm, self.y0, wr, hl),
            BoxGeom::new(self.x0, ym, wl, hr),
            BoxGeom::new(xm, ym, wr, hr),
        ]
    }

    /// Bounding box of two boxes that share a full edge.
    pub fn union(&self, other: &BoxGeom) -> Option<BoxGeom> {
        let side_by_side = self.y0 == other.y0
            && self.h == other.h
            && (self.x0 + self.w == other.x0 || other.x0 + other.w == self.x0);
        let stacked = self.x0 == other.x0
            && self.w == other.w
            && (self.y0 + self.h == other.y0 || other.y0 + other.h == self.y0);
        if side_by_side {
            Some(BoxGeom::new(
                self.x0.min(other.x0),
                self.y0,
                self.w + other.w,
                self.h,
            ))
        } else if stacked {
            Some(BoxGeom::new(
                self.x0,
                self.y0.min(other.y0),
                self.w,
                self.h + other.h,
            ))
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxNode {
    pub geom: BoxGeom,
    pub parent: Option<usize>,
    /// `[SW, SE, NW, NE]` indices into the next finer level.
    pub children: Option<[usize; 4]>,
}

/// Quadtree over the unknowns; `levels[0]` holds the root.
#[derive(Clone, Debug)]
pub struct BoxTree {
    side: usize,
    nleaf: usize,
    levels: Vec<Vec<BoxNode>>,
}

pub const DEFAULT_NLEAF: usize = 4096;

/// Quadtree over a `side x side` block of unknowns whose leaves hold at
/// most `nleaf` nodes.
pub fn build_tree(side: usize, nleaf: usize) -> Result<BoxTree> {
    if side < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 unknowns per side, got {side}"
        )));
    }
    if nleaf < 16 {
        return Err(Error::InvalidArgument(format!(
            "leaf capacity must be at least 16, got {nleaf}"
        )));
    }
    let mut depth = 0;
    while side.div_ceil(1 << depth).pow(2) > nleaf {
        depth += 1;
    }
    let mut levels = vec![vec![BoxNode {
        geom: BoxGeom::new(0, 0, side, side),
        parent: None,
        children: None,
    }]];
    for _ in 0..depth {
        let coarse = levels.last_mut().unwrap();
        let mut fine = Vec::with_capacity(coarse.len() * 4);
        for (idx, node) in coarse.iter_mut().enumerate() {
            let base = fine.len();
            for geom in node.geom.quadrants() {
                fine.push(BoxNode {
                    geom,
                    parent: Some(idx),
                    children: None,
                });
            }
            node.children = Some([base, base + 1, base + 2, base + 3]);
        }
        levels.push(fine);
    }
    Ok(BoxTree {
        side,
        nleaf,
        levels,
    })
}

impl BoxTree {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn nleaf(&self) -> usize {
        self.nleaf
    }

    /// Number of refinement levels `L`; leaves live at level `L`.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &[BoxNode] {
        &self.levels[l]
    }

    pub fn root(&self) -> &BoxNode {
        &self.levels[0][0]
    }

    pub fn leaves(&self) -> &[BoxNode] {
        self.levels.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace(n: usize) -> ProblemSpec {
        ProblemSpec::continuum(
            "laplace",
            n,
            Coefficient::zero(),
            Coefficient::zero(),
            Coefficient::zero(),
        )
    }

    #[test]
    fn laplace_row_at_quarter_spacing() {
        let op = discretize(&laplace(5)).unwrap();
        let row = op.row(op.id(1, 1));
        assert_eq!(row.diagonal, 64.0);
        assert_eq!(row.entries.len(), 4);
        for (nb, c) in row.entries {
            assert!(matches!(nb, Neighbor::Unknown(_)));
            assert_eq!(c, -16.0);
        }
    }

    #[test]
    fn unit_network_is_unit_spacing_laplacian() {
        let n = 7;
        let spec = ProblemSpec {
            name: "net".into(),
            n,
            mode: Mode::Network(Conductivities::uniform(n, 1.0)),
            seed: 0,
        };
        let op = discretize(&spec).unwrap();
        for k in 0..op.len() {
            assert_eq!(op.diagonal(k), 4.0);
            for dir in Dir::ALL {
                assert_eq!(op.neighbor_coefficient(k, dir), -1.0);
            }
        }
    }

    #[test]
    fn rejects_small_grid_and_nonfinite_coefficients() {
        assert!(discretize(&laplace(3)).is_err());
        let bad = ProblemSpec::continuum(
            "bad",
            6,
            Coefficient::zero(),
            Coefficient::zero(),
            Coefficient::field(|x, _| if x > 0.5 { f64::NAN } else { 0.0 }),
        );
        assert!(matches!(
            discretize(&bad),
            Err(Error::NonFiniteCoefficient { field: "d", .. })
        ));
    }

    #[test]
    fn symmetric_without_convection_and_row_sums_vanish() {
        let spec = ProblemSpec::continuum(
            "var",
            9,
            Coefficient::zero(),
            Coefficient::zero(),
            Coefficient::field(|x, y| x * y),
        );
        let op = discretize(&spec).unwrap();
        for t in op.triplets() {
            assert_eq!(t.val, op.coupling(t.col, t.row));
        }
        let lap = discretize(&laplace(9)).unwrap();
        let mut sums: Vec<f64> = (0..lap.len()).map(|k| lap.diagonal(k)).collect();
        for t in lap.triplets().iter().filter(|t| t.row != t.col) {
            sums[t.row] += t.val;
        }
        for f in lap.forcing() {
            sums[f.row] += f.coefficient;
        }
        assert!(sums.iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn perimeter_positions_round_trip() {
        for geom in [
            BoxGeom::new(2, 3, 5, 4),
            BoxGeom::new(0, 0, 2, 2),
            BoxGeom::new(1, 1, 1, 4),
            BoxGeom::new(1, 1, 4, 1),
        ] {
            let coords = geom.perimeter_coords();
            assert_eq!(coords.len(), geom.boundary_len());
            for (pos, (p, q)) in coords.iter().enumerate() {
                assert_eq!(geom.boundary_position(*p, *q), Some(pos));
            }
        }
        let g = BoxGeom::new(0, 0, 4, 3);
        assert_eq!(
            g.perimeter_coords(),
            vec![(0, 0), (1, 0), (2, 0), (3, 0), (3, 1), (3, 2), (2, 2), (1, 2), (0, 2), (0, 1)]
        );
    }

    #[test]
    fn tree_depths() {
        let t = build_tree(16, 64).unwrap();
        assert_eq!(t.depth(), 1);
        assert!(t.leaves().iter().all(|b| b.geom.len() == 64));
        assert_eq!(build_tree(64, 4096).unwrap().depth(), 0);
        assert_eq!(build_tree(128, 4096).unwrap().depth(), 1);
        assert!(build_tree(16, 8).is_err());
    }

    #[test]
    fn boxes_partition_each_level() {
        let side = 37;
        let tree = build_tree(side, 40).unwrap();
        for l in 0..=tree.depth() {
            let mut seen = vec![0u8; side * side];
            for b in tree.level(l) {
                let nodes = b.geom.nodes(side);
                let interior = b.geom.interior(side);
                let boundary = b.geom.perimeter(side);
                assert_eq!(interior.len() + boundary.len(), nodes.len());
                for k in nodes {
                    seen[k] += 1;
                }
                if let Some(ch) = b.children {
                    let mut union: Vec<usize> = ch
                        .iter()
                        .flat_map(|&c| tree.level(l + 1)[c].geom.nodes(side))
                        .collect();
                    union.sort_unstable();
                    let mut own = b.geom.nodes(side);
                    own.sort_unstable();
                    assert_eq!(union, own);
                }
            }
            assert!(seen.iter().all(|&s| s == 1));
        }
        assert!(tree.leaves().iter().all(|b| b.geom.len() <= 40));
    }
}
