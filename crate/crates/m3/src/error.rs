use std::io;
use std::path::PathBuf;

use m3_core::FormatError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] m3_core::Error),
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("{}: disk full", path.display())]
    DiskFull { path: PathBuf },
    #[error("{}: permission denied", path.display())]
    PermissionDenied { path: PathBuf },
    #[error("{}: mapping failed: {source}", path.display())]
    Mapping { path: PathBuf, source: io::Error },
    #[error("out of memory: cannot allocate {bytes} bytes for in-RAM load of {}", path.display())]
    OutOfMemory { path: PathBuf, bytes: u64 },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(String),
    #[error("{0}")]
    Usage(String),
    #[error("benchmark failed for {failed} of {total} sizes")]
    Sweep { failed: usize, total: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Classifies an IO failure on `path`.
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        match source.kind() {
            io::ErrorKind::PermissionDenied => Self::PermissionDenied { path },
            io::ErrorKind::StorageFull => Self::DiskFull { path },
            _ if source.raw_os_error() == Some(libc::ENOSPC) => Self::DiskFull { path },
            _ => Self::Io { path, source },
        }
    }

    pub fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Self::Format { path: path.into(), source }
    }
}
