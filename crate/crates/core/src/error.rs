use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised by the detection engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("candidate {0} lies outside the volume")]
    InvalidCandidate(u64),
    #[error("phantom generation failed: {0}")]
    Generation(String),
    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("candidate {id}: {source}")]
    AtCandidate { id: u64, source: Box<Error> },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dataset(msg: impl Into<String>) -> Self {
        Error::InvalidDataset(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Attach the id of the candidate being processed.
    pub fn at_candidate(self, id: u64) -> Self {
        Error::AtCandidate { id, source: Box::new(self) }
    }
}
