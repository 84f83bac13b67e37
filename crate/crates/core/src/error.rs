//! Crate-wide error type.
//!
//! One enum rather than per-module error types: the training and evaluation
//! layers compose operations from every other module, and callers mostly
//! want to know *which contract* broke, not which module noticed first.

use thiserror::Error;

/// Anything a fallible operation in this crate can report.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between two operands. Names both shapes.
    #[error("dimension mismatch in {op}: left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    DimMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A single operand has an unusable shape for the requested operation.
    #[error("bad shape for {op}: got {rows}x{cols}, {expected}")]
    BadShape {
        op: &'static str,
        rows: usize,
        cols: usize,
        expected: String,
    },

    /// Non-finite value (NaN or infinity) where finite data is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A tape handle does not belong to this tape or is out of range.
    #[error("invalid tape variable id {id} (tape has {len} nodes)")]
    BadVar { id: usize, len: usize },

    /// Gradient target must be a 1x1 scalar node.
    #[error("gradient target must be 1x1, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },

    /// Adapter does not carry factors for the requested projection.
    #[error("projection {proj} is not in the adapter's adapted set")]
    NotAdapted { proj: &'static str },

    /// Rank must satisfy 1 <= r <= min(rows, cols) of the adapted weight.
    #[error("invalid LoRA rank {rank} for a {rows}x{cols} weight")]
    BadRank { rank: usize, rows: usize, cols: usize },

    /// Theorem-1 machinery requires adaptation restricted to {v, o}.
    #[error("theorem assumption violated: adapter for concept {concept} adapts q or k")]
    TheoremAssumption { concept: usize },

    /// Both induced shifts vanished, so no direction is defined.
    #[error("degenerate shift: Frobenius norm below {eps:e} for concept pair ({i}, {j})")]
    DegenerateShift { i: usize, j: usize, eps: f64 },

    /// Operation needs a non-empty collection.
    #[error("empty input: {what}")]
    Empty { what: &'static str },

    /// Timestep outside the schedule.
    #[error("timestep {t} out of range 0..={t_max}")]
    BadTimestep { t: usize, t_max: usize },

    /// Schedule values must lie in [0, 1] and strictly decrease.
    #[error("invalid noise schedule: {reason}")]
    BadSchedule { reason: String },

    /// Concept id outside the world's vocabulary.
    #[error("unknown concept id {id} (world has {n} concepts)")]
    UnknownConcept { id: usize, n: usize },

    /// Erasure request failed validation.
    #[error("invalid request: {reason}")]
    InvalidRequest { reason: String },

    /// Training aborted because a loss component became non-finite.
    #[error("training diverged at step {step}: {component} is non-finite")]
    Diverged { step: usize, component: &'static str },

    /// The frozen-base contract was violated.
    #[error("base denoiser must be frozen before erasure training (call freeze())")]
    BaseNotFrozen,

    /// CSV/taxonomy parse failure, with 1-based line number where known.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// Same character listed twice under the same series.
    #[error("duplicate concept at line {line}: character {name:?} already defined")]
    DuplicateConcept { line: usize, name: String },

    /// A node re-appears under a different parent.
    #[error("hierarchy violation at line {line}: {name:?} already belongs to {existing:?}")]
    HierarchyViolation {
        line: usize,
        name: String,
        existing: String,
    },

    /// Taxonomy lookup for an unknown node name.
    #[error("unknown taxonomy node {name:?}")]
    UnknownNode { name: String },

    /// Serialized artifact is malformed.
    #[error("malformed {what}: {reason}")]
    BadArtifact { what: &'static str, reason: String },

    /// Base-model quality gate failed; erasure metrics would be meaningless.
    #[error("base quality gate failed: hit rate {rate:.3} < {required:.3}")]
    QualityGate { rate: f64, required: f64 },

    /// Experiment cell could not be evaluated.
    #[error("experiment cell {cell} failed: {reason}")]
    Cell { cell: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
