use thiserror::Error;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed match file or configuration document.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A structurally valid record that breaks a data-model invariant.
    #[error("invalid match {match_id:?}{}: {message}", rally.map(|r| format!(" (rally {r})")).unwrap_or_default())]
    Validation {
        match_id: String,
        rally: Option<usize>,
        message: String,
    },

    /// Input outside the domain of an operation (bad dimension, range, config value).
    #[error("domain error: {0}")]
    Domain(String),

    /// Training labels contain a single class.
    #[error("degenerate fit: training labels contain only class {0}")]
    DegenerateFit(i8),

    /// Iterative solver hit its iteration cap.
    #[error(
        "solver did not converge after {iterations} iterations (final violation {violation:e})"
    )]
    Convergence { iterations: usize, violation: f64 },

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("grid has {size} combinations, exceeding the cap of {cap}")]
    GridTooLarge { size: usize, cap: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 1 for bad input, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Parse { .. } | Error::Validation { .. } | Error::Domain(_) => 1,
            Error::GridTooLarge { .. } => 1,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
