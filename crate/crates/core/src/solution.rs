//! The root solution operator shared by both build engines.

use std::fmt;

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bodyload::BodyLoadSet;
use crate::error::{Error, Result};
use crate::hbs::{hbs_encoded_len, HbsMatrix, LowRank};
use crate::hbs_ops::InverseFactors;
use crate::linalg::{col, matmul, to_vec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Dense,
    Accelerated,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Dense => "dense",
            Engine::Accelerated => "accel",
        })
    }
}

/// Tuning knobs for the engines.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    /// Relative truncation tolerance per compressed block.
    pub tolerance: f64,
    /// Boundary size from which Schur complements are held compressed.
    pub crossover: usize,
    /// Leaf size of the HBS index trees.
    pub hbs_leaf: usize,
    /// Ranks above this trigger a warning.
    pub rank_cap: usize,
    /// Process boxes of one level concurrently.
    pub parallel: bool,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_CROSSOVER: usize = 1024;

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            crossover: DEFAULT_CROSSOVER,
            hbs_leaf: crate::hbs::DEFAULT_LEAF_SIZE,
            rank_cap: 200,
            parallel: true,
        }
    }
}

/// One merge stage (or the leaf stage) of a build.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub stage: &'static str,
    pub boxes: usize,
    pub max_boundary: usize,
    pub compressed: bool,
    pub max_rank: usize,
    /// Bytes held by the Schur complements emitted by this stage.
    pub bytes: usize,
    pub seconds: f64,
}

impl LevelDiagnostics {
    pub const CSV_HEADER: &'static str =
        "level,stage,boxes,max_boundary,representation,max_rank,bytes,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6}",
            self.level,
            self.stage,
            self.boxes,
            self.max_boundary,
            if self.compressed { "hbs" } else { "dense" },
            self.max_rank,
            self.bytes,
            self.seconds
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct BuildReport {
    pub levels: Vec<LevelDiagnostics>,
    /// Estimate of `||S|| ||S^{-1}||` at the root.
    pub condition_estimate: f64,
    pub warnings: Vec<String>,
    /// Number of times a segment had to be recompressed densely onto its
    /// canonical tree.
    pub retree_fallbacks: usize,
}

impl BuildReport {
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from(LevelDiagnostics::CSV_HEADER);
        out.push('\n');
        for l in &self.levels {
            out.push_str(&l.csv_row());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum RootOperator {
    Dense { s: Mat<f64>, g: Mat<f64> },
    Compressed { s: HbsMatrix, inverse: InverseFactors },
}

/// Boundary response to the fixed body loads: `v = G g + F f`.
#[derive(Clone, Debug)]
pub struct BodyOperator {
    pub loads: BodyLoadSet,
    pub f: LowRank,
}

#[derive(Clone, Debug)]
pub struct SolutionOperator {
    pub engine: Engine,
    /// Root boundary unknowns in perimeter order.
    pub boundary: Vec<usize>,
    pub root: RootOperator,
    pub body: Option<BodyOperator>,
    pub report: BuildReport,
}

impl SolutionOperator {
    pub fn boundary_len(&self) -> usize {
        self.boundary.len()
    }

    /// `G g`.
    pub fn apply_dtn(&self, g: &[f64]) -> Result<Vec<f64>> {
        Ok(to_vec(self.apply_dtn_mat(col(g).as_ref())?.as_ref()))
    }

    pub fn apply_dtn_mat(&self, g: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if g.nrows() != self.boundary_len() {
            return Err(Error::DimensionMismatch {
                expected: self.boundary_len(),
                got: g.nrows(),
            });
        }
        match &self.root {
            RootOperator::Dense { g: gm, .. } => Ok(matmul(gm.as_ref(), g)),
            RootOperator::Compressed { inverse, .. } => inverse.apply_inverse_mat(g),
        }
    }

    fn apply_dtn_transpose_mat(&self, g: MatRef<'_, f64>) -> Result<Mat<f64>> {
        match &self.root {
            RootOperator::Dense { g: gm, .. } => Ok(matmul(gm.transpose(), g)),
            RootOperator::Compressed { inverse, .. } => inverse.apply_inverse_transpose_mat(g),
        }
    }

    /// `S x`.
    pub fn apply_schur(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        match &self.root {
            RootOperator::Dense { s, .. } => Ok(matmul(s.as_ref(), x)),
            RootOperator::Compressed { s, .. } => s.apply_mat(x),
        }
    }

    /// `v = G g + F f`.
    pub fn solve_with_load(&self, g: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.apply_dtn(g)?;
        let n_body = self.body.as_ref().map_or(0, |b| b.f.ncols());
        if f.len() != n_body {
            return Err(Error::DimensionMismatch {
                expected: n_body,
                got: f.len(),
            });
        }
        if let Some(body) = &self.body {
            let w = body.f.apply(col(f).as_ref());
            for (vi, wi) in v.iter_mut().zip(to_vec(w.as_ref())) {
                *vi += wi;
            }
        }
        Ok(v)
    }

    /// Dense `G`, for tests and small problems.
    pub fn dense_g(&self) -> Mat<f64> {
        match &self.root {
            RootOperator::Dense { g, .. } => g.clone(),
            RootOperator::Compressed { inverse, .. } => inverse
                .apply_inverse_mat(Mat::<f64>::identity(self.boundary_len(), self.boundary_len()).as_ref())
                .expect("identity has the boundary size"),
        }
    }

    pub fn dense_s(&self) -> Mat<f64> {
        match &self.root {
            RootOperator::Dense { s, .. } => s.clone(),
            RootOperator::Compressed { s, .. } => s.reconstruct(),
        }
    }

    pub fn max_rank(&self) -> usize {
        match &self.root {
            RootOperator::Dense { .. } => 0,
            RootOperator::Compressed { s, .. } => s.max_rank(),
        }
    }

    /// Serialized size of the retained factors: the root `S` and its
    /// inverse, plus the body-load map when present.
    pub fn storage_bytes(&self) -> usize {
        let root = match &self.root {
            RootOperator::Dense { s, g } => 32 + 8 * (s.nrows() * s.ncols() + g.nrows() * g.ncols()),
            RootOperator::Compressed { s, inverse } => hbs_encoded_len(s) + inverse.encoded_len(),
        };
        let body = self.body.as_ref().map_or(0, |b| 32 + 8 * b.f.payload_len());
        root + body
    }

    /// Power-iteration estimate of `||S||_2 ||G||_2`.
    pub(crate) fn estimate_condition(&self, iterations: usize, seed: u64) -> f64 {
        let n = self.boundary_len();
        if n == 0 {
            return 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Mat::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let norm_of = |fwd: &dyn Fn(MatRef<'_, f64>) -> Mat<f64>, bwd: &dyn Fn(MatRef<'_, f64>) -> Mat<f64>| {
            let mut x: Mat<f64> = start.clone();
            let mut sigma = 0.0;
            for _ in 0..iterations {
                let nx: f64 = x.norm_l2();
                if nx == 0.0 || !nx.is_finite() {
                    break;
                }
                x *= faer::Scale(1.0 / nx);
                let y = fwd(x.as_ref());
                sigma = y.norm_l2();
                x = bwd(y.as_ref());
            }
            sigma
        };
        let s_norm = match &self.root {
            RootOperator::Dense { s, .. } => norm_of(&|x| matmul(s.as_ref(), x), &|y| matmul(s.transpose(), y)),
            RootOperator::Compressed { s, .. } => norm_of(
                &|x| s.apply_mat(x).unwrap(),
                &|y| s.apply_transpose_mat(y).unwrap(),
            ),
        };
        let g_norm = norm_of(
            &|x| self.apply_dtn_mat(x).unwrap(),
            &|y| self.apply_dtn_transpose_mat(y).unwrap(),
        );
        s_norm * g_norm
    }

    pub(crate) fn attach_body(&mut self, loads: &BodyLoadSet, root_rhs: Mat<f64>, tolerance: f64) -> Result<()> {
        let f = self.apply_dtn_mat(root_rhs.as_ref())?;
        let f = LowRank::from_dense(f.as_ref(), crate::linalg::Tolerance::relative(tolerance));
        self.body = Some(BodyOperator {
            loads: loads.clone(),
            f,
        });
        Ok(())
    }

    pub(crate) fn finish(&mut self, seed: u64) {
        self.report.condition_estimate = self.estimate_condition(30, seed);
        if self.report.condition_estimate > 1e10 {
            let msg = format!(
                "root Schur complement is nearly singular: condition estimate {:.3e}",
                self.report.condition_estimate
            );
            log::warn!("{msg}");
            self.report.warnings.push(msg);
        }
    }
}
