use thiserror::Error;

/// Errors produced while assembling operators, building solution operators,
/// or running structured matrix arithmetic.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coefficient `{field}` is not finite at grid node ({i}, {j})")]
    NonFiniteCoefficient { field: &'static str, i: usize, j: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A dense factorization met a (numerically) singular matrix. `what` names
    /// the matrix, `location` the box / tree node / merge step it belongs to.
    #[error("singular {what} at {location} (pivot ratio {pivot_ratio:.3e})")]
    Singular {
        what: String,
        location: String,
        pivot_ratio: f64,
    },

    #[error("index trees of the operands do not match")]
    TreeMismatch,

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("body load at grid node ({i}, {j}) is not strictly inside the root box")]
    LoadNotInterior { i: usize, j: usize },

    #[error("duplicate body load at grid node ({i}, {j})")]
    DuplicateLoad { i: usize, j: usize },

    #[error("solve did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
