//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("NaN encountered during backward pass of op `{op}`")]
    BackwardNaN { op: &'static str },

    #[error("loss did not evaluate to a finite scalar (got {value})")]
    NonFiniteLoss { value: f64 },

    #[error("derivative order {order} unsupported (max 2)")]
    UnsupportedOrder { order: usize },

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("parameter sets diverge at `{0}`")]
    StructuralMismatch(String),

    #[error("invalid LoRA rank {rank} for a {rows}x{cols} weight")]
    InvalidRank {
        rank: usize,
        rows: usize,
        cols: usize,
    },

    #[error("solver blow-up at t = {time:.6e} (|u| > {limit:.1e})")]
    Blowup { time: f64, limit: f64 },

    #[error("solver produced non-finite state at t = {time:.6e}")]
    SolverNonFinite { time: f64 },

    #[error("dataset sample {index} failed: {source}")]
    SampleFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step} (loss {loss:.3e})")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint corrupt: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("manifest encode/decode failed: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
