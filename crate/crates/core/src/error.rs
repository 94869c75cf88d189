use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("problem has no clients")]
    NoClients,
    #[error("client {client} has an empty active coordinate set")]
    EmptyActiveSet { client: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("sparsity generation failed after {attempts} attempts: some client owns no coordinate")]
    GenerationFailed { attempts: usize },
    #[error("libsvm parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("cannot spread {rows} data points over {clients} clients")]
    NotEnoughData { rows: usize, clients: usize },
    #[error("iterate diverged: {0}")]
    Diverged(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("traces belong to different problems ({0} vs {1})")]
    ProblemMismatch(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
