//! Sparse body loads: a fixed set of interior nodes whose unit loads are
//! carried through the build, giving `v = G g + F f`.

use crate::error::{Error, Result};
use crate::grid::{BoxTree, Operator};
use crate::solution::{BuildOptions, Engine, SolutionOperator};

/// Load nodes given by full-grid coordinates `(i, j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BodyLoadSet {
    coords: Vec<(usize, usize)>,
    nodes: Vec<usize>,
}

impl BodyLoadSet {
    /// Validate that every node is an unknown off the root boundary ring of an
    /// `n x n` grid, and that no node repeats.
    pub fn new(n: usize, coords: &[(usize, usize)]) -> Result<Self> {
        let side = n.saturating_sub(2);
        let mut nodes = Vec::with_capacity(coords.len());
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in coords {
            if n < 6 || i < 2 || j < 2 || i > n - 3 || j > n - 3 {
                return Err(Error::LoadNotInterior { i, j });
            }
            if !seen.insert((i, j)) {
                return Err(Error::DuplicateLoad { i, j });
            }
            nodes.push((j - 1) * side + (i - 1));
        }
        Ok(Self {
            coords: coords.to_vec(),
            nodes,
        })
    }

    pub fn empty() -> Self {
        Self {
            coords: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    /// Unknown ids of the load nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Parse `i j` pairs, one per line; `#` starts a comment.
    pub fn parse(n: usize, text: &str) -> Result<Self> {
        let mut coords = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
            let mut next = || -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: expected `i j`", line_no + 1)))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))
            };
            let (i, j) = (next()?, next()?);
            if parts.next().is_some() {
                return Err(Error::Parse(format!("line {}: trailing input", line_no + 1)));
            }
            coords.push((i, j));
        }
        Self::new(n, &coords)
    }
}

/// Build the solution operator together with the body-load map `F`.
pub fn build_body_operator(
    op: &Operator,
    tree: &BoxTree,
    loads: &BodyLoadSet,
    engine: Engine,
    options: &BuildOptions,
) -> Result<SolutionOperator> {
    match engine {
        Engine::Dense => crate::dense_nd::build_root_dense(op, tree, Some(loads), options),
        Engine::Accelerated => crate::accel_nd::build_root_accel(op, tree, Some(loads), options),
    }
}

/// `v = G g + F f`.
pub fn solve_with_load(op: &SolutionOperator, g: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    op.solve_with_load(g, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_and_parsing() {
        let set = BodyLoadSet::parse(10, "# loads\n2 2\n7 3 # comment\n\n4,5\n").unwrap();
        assert_eq!(set.coords(), &[(2, 2), (7, 3), (4, 5)]);
        assert_eq!(set.nodes()[0], 8 + 1);
        assert!(matches!(BodyLoadSet::new(10, &[(1, 4)]), Err(Error::LoadNotInterior { .. })));
        assert!(matches!(BodyLoadSet::new(10, &[(8, 4)]), Err(Error::LoadNotInterior { .. })));
        assert!(matches!(BodyLoadSet::new(10, &[(3, 3), (3, 3)]), Err(Error::DuplicateLoad { .. })));
        assert!(BodyLoadSet::parse(10, "3").is_err());
        assert!(BodyLoadSet::parse(10, "3 4 5").is_err());
        assert!(BodyLoadSet::parse(10, "x 4").is_err());
    }
}
