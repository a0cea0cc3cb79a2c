use thiserror::Error;

use crate::converse::RankRatioWitness;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("SVD did not converge on a {rows}x{cols} matrix")]
    SvdNonConvergence { rows: usize, cols: usize },

    /// Null space empty under the rank policy; the combiner design is over-constrained.
    #[error("infeasible: {constraints}x{dim} constraint matrix has empty null space ({context})")]
    Infeasible {
        constraints: usize,
        dim: usize,
        context: String,
    },

    #[error("singular {dim}x{dim} channel matrix (pivot ratio {pivot_ratio:e})")]
    SingularChannel { dim: usize, pivot_ratio: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rank-ratio bound violated: rank_S = {} > bound = {}", .0.rank_s, .0.bound)]
    ConverseViolation(Box<RankRatioWitness>),

    #[error("structural audit failed: {0}")]
    Structural(String),

    /// A probability-zero degeneracy was hit; the caller should draw a new sample.
    #[error("degenerate sample, resample: {0}")]
    Resample(String),

    #[error("rate window [{lo} dB, {hi} dB] covers {found} points, need at least 2")]
    WindowNotCovered { lo: f64, hi: f64, found: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
