//! Hierarchically block separable matrices.

mod io;
mod lowrank;
mod matrix;
mod tree;

pub use io::{hbs_encoded_len, read_dense, read_hbs, write_dense, write_hbs};
pub use lowrank::{LowRank, Term};
pub use matrix::{HbsMatrix, HbsNode, NodeKind};
pub use tree::{IndexTree, TreeNode};

/// Default leaf size of HBS index trees.
pub const DEFAULT_LEAF_SIZE: usize = 64;
