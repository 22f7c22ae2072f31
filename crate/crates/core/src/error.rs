use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("attribute `{attribute}`: {distinct} distinct values, need at least {bins} for percentile bins")]
    DegenerateBins {
        attribute: String,
        distinct: usize,
        bins: usize,
    },

    #[error("attribute `{attribute}`: value {value} outside level {level} intervals")]
    OutOfRange {
        attribute: String,
        level: usize,
        value: f64,
    },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("knowledge base line {line}: {msg}")]
    KnowledgeBase { line: usize, msg: String },

    #[error("model file line {line}: {msg}")]
    Model { line: usize, msg: String },

    #[error("relation has no remaining attributes")]
    EmptyRelation,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series of length {len} is shorter than the {needed}-point baseline")]
    InsufficientBaseline { len: usize, needed: usize },

    #[error("series of length {len} too short for window {window}")]
    InsufficientData { len: usize, window: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("{path}:{line}: {msg}")]
    Load {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("all attributes are constant; nothing left to model")]
    NoFeatures,

    #[error("truth file has {found} entries, expected {expected}")]
    Alignment { expected: usize, found: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
