//! Error model, split/merge algebra, and Monte Carlo verification that a
//! single local-global merge never increases per-unit semantic error when
//! the error magnitude is a concave function of presence probability.

mod algebra;
mod error_model;
mod monte_carlo;
mod sign;

pub use algebra::{
    jensen_gap, merge_semantics, reconstruct_merged_error, sample_split, theorem_gap, MergeSpec,
    NormTriple, SplitSpec, TrialRecord,
};
pub use error_model::{
    apply_error_model, midpoint_concave, ConcaveErrorModel, ConvexErrorModel, ErrorMagnitude,
    PhiKind,
};
pub use monte_carlo::{
    run_monte_carlo, run_trial, run_violation_study, AlphaSource, EtaSource, Histogram,
    MonteCarloConfig, MonteCarloSummary, NormPairStats, Perturbation, Quantiles, ViolationCounts,
};
pub use sign::{counter_hash, SignPolicy};

use thiserror::Error;

/// Absolute tolerance for every inequality checked by the verifier.
pub const INEQUALITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("error model scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("error model fails the midpoint concavity check")]
    NotConcave,
    #[error("error model can push semantics outside [0,1]; not allowed in valid-semantics mode")]
    NotSemanticsPreserving,
    #[error("split weights must be non-negative and sum to 1 (sum = {0})")]
    BadAlpha(f64),
    #[error("split needs at least one patch")]
    NoPatches,
    #[error("eta must lie strictly inside (0, 1), got {0}")]
    BadEta(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("fixed alpha has {actual} weights but m = {expected}")]
    AlphaLength { expected: usize, actual: usize },
    #[error("perturbation magnitude must be finite and non-negative, got {0}")]
    BadPerturbation(f64),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, TheoryError>;
