use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure classes surfaced by the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
    Io,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Numeric => "numeric",
            Category::Io => "io",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numeric => 4,
            Category::Io => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("identity `{identity}` leaks across splits ({first} and {second})")]
    SplitLeak {
        identity: String,
        first: String,
        second: String,
    },

    #[error("duplicate video_path `{0}`")]
    DuplicateVideo(PathBuf),

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Parse { .. }
            | Error::SplitLeak { .. }
            | Error::DuplicateVideo(_)
            | Error::Decode { .. }
            | Error::Data(_)
            | Error::Shape(_) => Category::Data,
            Error::Numeric(_) => Category::Numeric,
            Error::MissingFile(_) | Error::Io { .. } | Error::Serde(_) => Category::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
