use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frame {frame}: failed to load {path}: {reason}")]
    Load {
        frame: u64,
        path: PathBuf,
        reason: String,
    },

    #[error("frame {frame}: format error: {reason}")]
    Format { frame: u64, reason: String },

    #[error("{0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("frame {frame}, stage {stage}: {source}")]
    Stage {
        frame: u64,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, frame: u64, stage: &'static str) -> Self {
        Error::Stage {
            frame,
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Numerical(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
