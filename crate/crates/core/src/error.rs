use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments; the message names the offending field.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is 1-based; `offset` is a byte offset for binary formats.
    #[error("{}: {message}", location(path, *line, *offset))]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        offset: Option<u64>,
        message: String,
    },

    #[error("mutation error: {0}")]
    Mutation(String),

    #[error("measure error: {0}")]
    Measure(#[from] crate::measures::MeasureError),
}

fn location(path: &std::path::Path, line: Option<usize>, offset: Option<u64>) -> String {
    match (line, offset) {
        (Some(l), _) => format!("{}:{l}", path.display()),
        (None, Some(o)) => format!("{} at byte offset {o}", path.display()),
        (None, None) => path.display().to_string(),
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse_line(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line: Some(line),
            offset: None,
            message: message.into(),
        }
    }

    pub fn parse_offset(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line: None,
            offset: Some(offset),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Parse { .. } => 3,
            Error::Mutation(_) | Error::Measure(_) => 1,
        }
    }
}
