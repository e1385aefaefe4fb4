use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: header {found:?} does not match {expected:?}")]
    Schema {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("inputs are not aligned: {0}")]
    Alignment(String),
    #[error("filter failed at step {time}: {source}")]
    Filter {
        time: u64,
        #[source]
        source: faultpf::Error,
    },
    #[error("{0} sweep cells failed")]
    CellsFailed(usize),
    #[error(transparent)]
    Traffic(#[from] faultpf_traffic::TrafficError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration problems are the caller's to fix; everything else is a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_))
    }
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;
