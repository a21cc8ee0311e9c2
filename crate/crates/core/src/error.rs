use thiserror::Error;

#[derive(Debug, Error)]
pub enum RemError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error in term `{term}`: {detail}")]
    Numeric { term: String, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate process: {0}")]
    DegenerateProcess(String),

    #[error("simulation truncated at time {max_time}: obtained {obtained} of {target} events")]
    Truncated {
        obtained: usize,
        target: usize,
        max_time: f64,
    },

    #[error("degenerate covariate `{0}`: zero variance")]
    DegenerateCovariate(String),

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid event sequence: {0}")]
    InvalidSequence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RemError>;
