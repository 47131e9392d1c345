use std::path::PathBuf;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} outside 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("ground truth mask has no positive pixels")]
    NoPositives,

    #[error("image too small: {0}")]
    TooSmall(String),

    #[error("cannot place lesion: {0}")]
    LesionPlacement(String),

    #[error("architecture hash mismatch: file has {found:#018x}, expected {expected:#018x}")]
    ArchitectureMismatch { expected: u64, found: u64 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Data errors (bad files, malformed inputs) versus usage errors; the CLI
    /// maps these to distinct exit codes.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Corrupt { .. }
                | Error::VersionMismatch { .. }
                | Error::Io { .. }
                | Error::ArchitectureMismatch { .. }
                | Error::EmptyDataset
                | Error::ShapeMismatch { .. }
                | Error::InvalidImage(_)
                | Error::NoPositives
                | Error::LesionPlacement(_)
                | Error::Serialization(_)
        )
    }
}
