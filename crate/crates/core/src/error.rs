use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("line {line}: invalid token `{token}` in field `{field}`")]
    InvalidToken {
        line: usize,
        field: &'static str,
        token: String,
    },

    #[error("line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: sample `{id}` has an empty description")]
    EmptyDescription { line: usize, id: String },

    #[error("sample `{0}` has no gold diagnosis")]
    MissingDiagnosis(String),

    #[error("unknown token `{token}` at position {position}")]
    UnknownToken { token: String, position: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {candidates} candidates vs {references} references")]
    LengthMismatch { candidates: usize, references: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("sequence has no maskable tokens")]
    NoMaskableTokens,

    #[error("bucket {bucket} out of range for {n_buckets} buckets")]
    BucketOutOfRange { bucket: usize, n_buckets: usize },

    #[error("too few samples for {n_buckets} buckets: got {got}")]
    TooFewSamples { n_buckets: usize, got: usize },

    #[error("embeddings missing for {} id(s): {}", .0.len(), preview(.0))]
    MissingEmbeddings(Vec<String>),

    #[error("prediction id sets differ: {0}")]
    IdMismatch(String),

    #[error("generator failed: {0}")]
    Generator(String),

    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 8;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}
