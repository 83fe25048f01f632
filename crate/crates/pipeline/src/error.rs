use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing {what}: {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error(transparent)]
    Core(#[from] gsd_core::Error),
    #[error("{stage} step {step}: non-finite {what}")]
    NonFinite {
        stage: &'static str,
        step: usize,
        what: String,
    },
    #[error("{stage} step {step}: frozen tensors of `{store}` changed")]
    FrozenChanged {
        stage: &'static str,
        step: usize,
        store: String,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

impl PipelineError {
    /// Process exit status: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use gsd_core::Error as E;
        match self {
            PipelineError::Usage(_) | PipelineError::Core(E::InvalidParameter(_)) => 1,
            PipelineError::Missing { .. } | PipelineError::Core(_) => 2,
            PipelineError::NonFinite { .. } | PipelineError::FrozenChanged { .. } => 3,
        }
    }
}
