//! Error types. `TensorError` covers the graph engine contracts; `Error` is
//! the crate-wide type the CLI maps to exit codes.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected matrix operands, got {lhs:?} / {rhs:?}")]
    NotAMatrix {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: empty or degenerate dimension")]
    EmptyDim { op: &'static str },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("cross_entropy: no supervised positions")]
    NoSupervisedPositions,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalarLoss { shape: Vec<usize> },
    #[error("non-finite value encountered")]
    NonFinite,
}

#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config error: {0}")]
    Config(String),
    #[error("stage dependency: {0}")]
    StageDependency(String),
    #[error("numeric divergence in {stage} at step {step}")]
    Divergence { stage: String, step: usize },
    #[error("unknown genre id {0}")]
    UnknownGenre(usize),
    #[error("unknown text template id {0}")]
    UnknownTemplate(usize),
    #[error("record too short: {got} frames, minimum {min}")]
    RecordTooShort { got: usize, min: usize },
    #[error("sequence length {frames} not divisible by downsample rate {l}")]
    IndivisibleLength { frames: usize, l: usize },
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code mapping: 2 config, 3 stage dependency, 4 divergence,
    /// 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::StageDependency(_) => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
