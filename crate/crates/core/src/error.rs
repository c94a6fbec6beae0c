use std::path::PathBuf;

use cse_tensor::KernelError;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("{path}:{line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("unknown {field} `{value}` (expected one of: {valid})")]
    UnknownCategory {
        field: &'static str,
        value: String,
        valid: String,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("class `{class}` has {count} samples, fewer than k = {k}")]
    TooFewSamples { class: u8, count: usize, k: usize },
    #[error("{negatives} negatives cannot match {positives} positives")]
    TooFewNegatives { positives: usize, negatives: usize },
    #[error("split file lists clip `{0}` which is absent from the corpus")]
    UnknownClip(String),
    #[error("missing output for fold {fold} of member {member}")]
    MissingFold { member: String, fold: usize },
    #[error("missing feature for member {0}")]
    MissingMember(String),
    #[error("feature cache schema {found} does not match {expected}")]
    StaleCache { found: u32, expected: u32 },
    #[error("empty test set")]
    EmptyTestSet,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
