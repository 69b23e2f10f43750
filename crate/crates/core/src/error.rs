use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variant names double as the machine-readable error kind printed by the
/// command-line tool, see [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
    #[error("unsupported character {0:?} at byte {1}")]
    UnsupportedCharacter(char, usize),
    #[error("unbalanced braces: {0}")]
    UnbalancedBraces(String),
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocab(String),
    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("malformed vocabulary file: {0}")]
    MalformedVocab(String),

    #[error("malformed superscript/subscript at token {0}: {1}")]
    MalformedSuperscript(usize, String),
    #[error("malformed fraction at token {0}: {1}")]
    MalformedFraction(usize, String),
    #[error("malformed square root at token {0}: {1}")]
    MalformedSqrt(usize, String),
    #[error("nesting depth {depth} exceeds the maximum of {max}")]
    DepthExceeded { depth: usize, max: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("InkML document has no truth annotation")]
    MissingTruth,
    #[error("InkML document has no traces")]
    EmptyTraces,
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("bad encoding dimension {0}: {1}")]
    BadDim(usize, &'static str),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("input {height}x{width} is smaller than the total stride {stride}")]
    InputTooSmall {
        height: usize,
        width: usize,
        stride: usize,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("non-finite gradient at step {step} in `{param}`")]
    NonFiniteGrad { step: usize, param: String },
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} predictions for {1} references")]
    PairCountMismatch(usize, usize),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
}

impl Error {
    /// The variant name, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownCommand(_) => "UnknownCommand",
            Error::UnsupportedCharacter(..) => "UnsupportedCharacter",
            Error::UnbalancedBraces(_) => "UnbalancedBraces",
            Error::EmptySequence => "EmptySequence",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::OutOfVocab(_) => "OutOfVocab",
            Error::IdOutOfRange { .. } => "IdOutOfRange",
            Error::MalformedVocab(_) => "MalformedVocab",
            Error::MalformedSuperscript(..) => "MalformedSuperscript",
            Error::MalformedFraction(..) => "MalformedFraction",
            Error::MalformedSqrt(..) => "MalformedSqrt",
            Error::DepthExceeded { .. } => "DepthExceeded",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::MalformedXml(_) => "MalformedXml",
            Error::MissingTruth => "MissingTruth",
            Error::EmptyTraces => "EmptyTraces",
            Error::MalformedImage(_) => "MalformedImage",
            Error::Io { .. } => "IoFailure",
            Error::CorruptRecord { .. } => "CorruptRecord",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonScalarLoss(_) => "NonScalarLoss",
            Error::BadDim(..) => "BadDim",
            Error::TargetOutOfRange { .. } => "TargetOutOfRange",
            Error::InputTooSmall { .. } => "InputTooSmall",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::NonFiniteGrad { .. } => "NonFiniteGrad",
            Error::Config(_) => "ConfigError",
            Error::PairCountMismatch(..) => "PairCountMismatch",
            Error::EmptyEvaluation => "EmptyEvaluation",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
