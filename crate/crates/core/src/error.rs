use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation received operands whose extents disagree.
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward needs a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph; call reset() before reusing it")]
    BackwardTwice,

    /// Every problem found in a config file, in file order.
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{what}: malformed at byte {offset}: {msg}")]
    Format {
        what: String,
        offset: usize,
        msg: String,
    },

    #[error("{phase} diverged at epoch {epoch}: loss = {loss}")]
    Diverged {
        phase: &'static str,
        epoch: usize,
        loss: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("run directory {0} is locked by another process")]
    Locked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable tag for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::BackwardTwice => "backward_twice",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Locked(_) => "locked",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn shape(op: &'static str, dim: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            dim,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
