use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("not enough cases: need at least {needed}, got {got}")]
    Sizing { needed: usize, got: usize },

    #[error("category `{0}` has no training examples")]
    EmptyCategory(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("unknown category `{category}` for outcome `{outcome}`")]
    UnknownCategory { outcome: String, category: String },

    #[error("label index {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("gini impurity is undefined for zero total weight")]
    UndefinedImpurity,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("model container: {0}")]
    Container(String),

    #[error("universe fingerprint mismatch: model has {model}, runtime has {runtime}")]
    FingerprintMismatch { model: String, runtime: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
