use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("vocabulary too small: need at least {needed} tokens, have {actual}")]
    VocabTooSmall { needed: usize, actual: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed trace at line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },

    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),

    #[error("invalid counts: accepted={accepted}, drafted={drafted}")]
    InvalidCounts { accepted: usize, drafted: usize },

    #[error("bandit has no arms")]
    EmptyArmSet,

    #[error("unknown arm {index} (have {count})")]
    UnknownArm { index: usize, count: usize },

    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),

    #[error("reward {0} is not binary")]
    NonBinaryReward(f64),

    #[error("empty context")]
    EmptyContext,

    #[error("output lengths differ: method produced {method} tokens, baseline {baseline}")]
    MismatchedOutputLength { method: usize, baseline: usize },

    #[error("model failure: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
