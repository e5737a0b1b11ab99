use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("duplicate (user, item) pair ({user}, {item})")]
    DuplicatePair { user: String, item: String },
    #[error("validation fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("id out of range: {0}")]
    IdOutOfRange(String),
    #[error("non-finite score for pair ({user}, {item})")]
    NonFiniteScore { user: u32, item: u32 },
    #[error("no score for pair ({user}, {item})")]
    MissingScore { user: u32, item: u32 },

    #[error("training data has no positive interactions")]
    NoPositives,
    #[error("training diverged: loss became {0} at epoch {1}")]
    Divergence(f64, usize),

    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("label {0} is outside [0, 1]")]
    LabelOutOfRange(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing propensity for item {0}")]
    MissingPropensity(u32),
    #[error("propensity must be positive, got {0}")]
    ZeroPropensity(f64),
    #[error("loss specification is incomplete: {0}")]
    IncompleteLossSpec(&'static str),
    #[error("fitting needs at least 3 distinct scores, found {0}")]
    TooFewDistinctScores(usize),
    #[error("user {0} has an empty candidate list")]
    EmptyCandidates(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
