//! Learning observer models for legible robot motion.
//!
//! The crate generates randomized goal-reaching trajectory datasets, labels
//! them with four hand-crafted legibility metrics, and trains two observer
//! models on those labels: SLOT-V (per-goal value aggregation with masked
//! softmax cross-entropy) and an adapted T-REX baseline (pairwise reward
//! ranking). A CLI orchestrates dataset generation, labeling, training, and
//! the accuracy-matrix / sample-efficiency experiments.

// Link the system BLAS; ndarray dispatches large matrix products to it.
extern crate blas_src;

pub mod config;
pub mod envgen;
pub mod geom;
pub mod nn;
pub mod oracles;
pub mod slotv;
pub mod trex;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate path: total arc length is zero")]
    DegeneratePath,
    #[error("invalid sample count {0}: need at least 2")]
    InvalidCount(usize),
    #[error("degenerate viewpoint: view direction parallel to up vector")]
    DegenerateViewpoint,
    #[error("invalid point: coordinates must be finite")]
    NonFinitePoint,
    #[error("invalid path: need at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("goal placement failed after {attempts} rejections (workspace too small for {goal_count} goals)")]
    PlacementFailure { goal_count: usize, attempts: usize },
    #[error("goal count {0} outside allowed range 2..={1}")]
    InvalidGoalCount(usize, usize),
    #[error("too many goals: {0} > G_max {1}")]
    TooManyGoals(usize, usize),
    #[error("empty goal set")]
    EmptyGoalSet,
    #[error("unknown environment id {0:?}")]
    UnknownEnvironment(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing labels for metric {0:?}")]
    MissingLabels(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, update {update}")]
    DivergedTraining { epoch: usize, update: usize },
    #[error("insufficient data: fewer than 2 usable trajectories after tie skipping")]
    InsufficientData,
    #[error("model/data mismatch: {0}")]
    ModelMismatch(String),
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
