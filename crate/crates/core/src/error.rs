//! Workspace-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operation rejected its operands.
    #[error("{op}: shape mismatch, got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Tensor operation rejected a single operand or argument.
    #[error("{op}: {msg}")]
    BadOperand { op: &'static str, msg: String },

    /// Gradient requested from a non-scalar output, wrong tape, etc.
    #[error("autodiff: {0}")]
    Autodiff(String),

    /// Dataset schema violation, with the offending line (1-based) where known.
    #[error("dataset line {line}: {msg}")]
    Schema { line: usize, msg: String },

    /// Dataset-level consistency failure (splits, shapes, labels).
    #[error("dataset: {0}")]
    Data(String),

    /// Generator rejected its configuration.
    #[error("generator: {0}")]
    Generator(String),

    /// Forward pass produced non-finite activations.
    #[error("forward: {0}")]
    Forward(String),

    /// Training diverged or was misconfigured.
    #[error("training: {0}")]
    Train(String),

    /// Interpretation method failed or was misconfigured.
    #[error("interpreter `{method}`: {msg}")]
    Interpret { method: String, msg: String },

    /// Metric preconditions violated (degenerate labels, empty inputs, ...).
    #[error("metric: {0}")]
    Metric(String),

    /// Experiment configuration rejected (maps to exit code 2 in the CLI).
    #[error("config: {0}")]
    Config(String),

    /// Checkpoint or artifact on disk does not match what was expected.
    #[error("artifact {path}: {msg}")]
    Artifact { path: String, msg: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
