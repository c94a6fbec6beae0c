use thiserror::Error;

pub type Result<T, E = KernelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid tensor: shape {shape:?} holds {expected} values but {actual} were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("invalid shape {0:?}: every extent must be >= 1")]
    ZeroExtent(Vec<usize>),

    #[error("convolution width must be odd for same padding, got {0}")]
    EvenWidth(usize),

    #[error("sequence must contain at least one step")]
    EmptySequence,

    #[error("dropout rate must lie in [0, 1), got {0}")]
    DropoutRate(f64),

    #[error("invalid layer `{layer}`: {reason}")]
    InvalidLayer { layer: String, reason: String },

    #[error("non-finite value produced by layer `{layer}` (loss = {loss})")]
    NonFinite { layer: String, loss: f64 },

    #[error("no parameters")]
    NoParameters,

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
