use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("degenerate normalization (norm {norm:e})")]
    DegenerateNormalization { norm: f64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown speaker id {0}")]
    UnknownSpeaker(usize),

    #[error("speaker set must not be empty")]
    EmptySpeakerSet,

    #[error("insufficient speakers: need {need}, have {have}")]
    InsufficientSpeakers { need: usize, have: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss {loss} at episode {episode}")]
    NonFiniteLoss { episode: usize, loss: f64 },

    #[error("insufficient enrollment material: no turn lasts at least {min_seconds} s")]
    InsufficientEnrollment { min_seconds: f64 },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unexpected end of parameter block `{0}`")]
    UnexpectedEnd(String),

    #[error("malformed model file at line {line}: {msg}")]
    MalformedModel { line: usize, msg: String },

    #[error("parameter block `{block}` header says {declared:?} but model dimensions imply {expected:?}")]
    BlockDims {
        block: String,
        declared: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("timeline mismatch: {0}")]
    TimelineMismatch(String),

    #[error("malformed RTTM at line {line}: {msg}")]
    MalformedRttm { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
