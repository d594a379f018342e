use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: scoregen_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file not found: {}", .0.display())]
    ConfigNotFound(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint format version {found}, this build reads {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum does not match its contents")]
    CorruptChecksum,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint was trained on schedule {found:016x}, config builds {expected:016x}")]
    ScheduleMismatch { found: u64, expected: u64 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Attaches a pipeline stage label to core errors.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> Stage<T> for scoregen_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| Error::Core { stage, source })
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
