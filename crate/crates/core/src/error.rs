use thiserror::Error;

/// Errors surfaced by data ingestion, model construction, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: String, message: String },

    /// Row numbers are 1-based and count data rows (the header is row 0).
    #[error("{path}, row {row}: {message}")]
    CsvRow {
        path: String,
        row: usize,
        message: String,
    },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("window out of range: offset {offset} + length {length} > series length {len}")]
    WindowOutOfRange {
        offset: usize,
        length: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("distance matrix: {0}")]
    DistanceMatrix(String),

    #[error("clustering: {0}")]
    Clustering(String),

    #[error("environment: {0}")]
    Environment(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
