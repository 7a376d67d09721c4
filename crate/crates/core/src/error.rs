use std::path::PathBuf;

/// Errors produced by the optimization library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The fitness-evaluation budget is exhausted.
    #[error("evaluation budget exhausted ({used}/{budget} evaluations used)")]
    BudgetExhausted { used: u64, budget: u64 },

    /// An object was used before it reached the required state.
    #[error("invalid state: {0}")]
    State(String),

    /// Inconsistent run or model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error in {source_name} at line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: msg.into(),
        }
    }
}
