use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cade_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },
    #[error("manifest check failed: {0}")]
    Manifest(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Io { path, source }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl ToString) -> Error {
        Error::Format { path: path.as_ref().to_path_buf(), msg: msg.to_string() }
    }

    pub fn config(field: impl Into<String>, msg: impl ToString) -> Error {
        Error::Config { field: field.into(), msg: msg.to_string() }
    }

    pub fn in_fold(self, fold: usize) -> Error {
        Error::Fold { fold, source: Box::new(self) }
    }
}
