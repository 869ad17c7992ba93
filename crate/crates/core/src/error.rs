use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("weights not normalized: sum of p_i is {sum} (expected 1)")]
    WeightsNotNormalized { sum: f64 },

    #[error("sampled clients per round K={k} exceeds the number of clients N={n}")]
    TooManySampled { k: usize, n: usize },

    #[error("total bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("invalid client {id}: {reason}")]
    InvalidClient { id: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid sampling distribution: {0}")]
    InvalidDistribution(String),

    #[error("sampling probability of client {client} is {q}, below the floor {floor}")]
    ProbabilityBelowFloor { client: usize, q: f64, floor: f64 },

    #[error("unexpected end of file in {}", path.display())]
    UnexpectedEof { path: PathBuf },

    #[error("bad IDX magic number in {}: expected {expected}, found {found}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("infeasible partition: class {class} has {available} samples but {needed} are required")]
    InfeasiblePartition {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("loss level {target} not reached; final loss {final_loss}")]
    LossNotReached { target: f64, final_loss: f64 },

    #[error("training diverged at round {round}: loss {loss} exceeds 10x the initial loss {initial}")]
    Diverged { round: usize, loss: f64, initial: f64 },

    #[error("uninformative pilots: every level took the same number of rounds under both schemes")]
    UninformativePilots,

    #[error("M = {m} is outside the feasible range [{lo}, {hi}]")]
    InfeasibleSlice { m: f64, lo: f64, hi: f64 },

    #[error("unknown scheme '{0}' (expected uniform, weighted, statistical or proposed)")]
    UnknownScheme(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
