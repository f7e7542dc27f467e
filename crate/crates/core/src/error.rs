use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{path}:{line}: {message}")]
    CsvRow {
        path: String,
        line: u64,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("metric undefined: {0}")]
    DegenerateMetric(String),

    #[error("closure is not deterministic: two evaluations returned {0} and {1}")]
    NonDeterministicClosure(f64, f64),

    #[error("artifact error: {0}")]
    Artifact(String),
}

pub type Result<T> = std::result::Result<T, Error>;
