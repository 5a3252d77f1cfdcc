use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("region kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("point outside the upper half-space: {0}")]
    OutsideHalfSpace(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("unknown role `{0}`")]
    UnknownRole(String),

    #[error("unknown ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),

    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("not enough non-basic edges: requested {requested}, available {available}")]
    NotEnoughEdges { requested: usize, available: usize },

    #[error("no valid corruption exists for parent `{0}`")]
    NoValidCorruption(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("scored pairs contain a single class; need at least one positive and one negative")]
    SingleClass,

    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
