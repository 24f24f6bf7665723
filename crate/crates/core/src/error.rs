use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("lookup error: index {index} out of range for field {field} with cardinality {cardinality}")]
    Lookup {
        field: usize,
        index: usize,
        cardinality: usize,
    },

    #[error("degenerate batch: batchnorm in train mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),

    #[error("degenerate interaction: pairwise interactions need at least 2 fields, got {0}")]
    DegenerateInteraction(usize),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("iteration error: {0}")]
    Iteration(String),

    #[error("temperature must be positive, got {0}")]
    Schedule(f64),

    #[error("divergence: non-finite gradient in parameter {0}")]
    Divergence(String),

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("run directory {} already exists (use --force to overwrite)", .0.display())]
    RunExists(PathBuf),

    #[error("{}: {source}", path.display())]
    Context {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn dimension(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn with_path(self, path: impl Into<PathBuf>) -> Self {
        Error::Context {
            path: path.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Schedule(_)
            | Error::Transfer(_)
            | Error::RunExists(_)
            | Error::Dimension { .. } => ErrorClass::Config,
            Error::Data(_)
            | Error::Lookup { .. }
            | Error::Split(_)
            | Error::Iteration(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Checkpoint(_) => ErrorClass::Data,
            Error::Numeric(_)
            | Error::Divergence(_)
            | Error::DegenerateBatch(_)
            | Error::DegenerateInteraction(_)
            | Error::UndefinedMetric(_) => ErrorClass::Numeric,
            Error::Io(_) => ErrorClass::Io,
            Error::Context { source, .. } => source.class(),
        }
    }
}
