use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] votersim_core::Error),
    #[error("i/o failure on {path}: {source}")]
    IoFailure { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("torus of {sites} sites exceeds the 2^27 memory guard")]
    TooLarge { sites: usize },
    #[error("bad snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::IoFailure { path, source }
}
