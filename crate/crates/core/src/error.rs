use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("{op}: index {index} out of range for {len} rows")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("loss must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error("truncated payload at byte {offset}")]
    Truncated { offset: u64 },

    #[error("label {label} >= num_classes {num_classes} at byte {offset}")]
    LabelOutOfRange {
        label: u16,
        num_classes: u16,
        offset: u64,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("coordinate {coord:?} out of range at depth {depth}")]
    CoordinateRange { coord: [u32; 3], depth: u32 },

    #[error("dims {dims:?} not divisible by {factor:?}")]
    Indivisible { dims: [usize; 3], factor: [usize; 3] },

    #[error("split decisions at depth {depth}: expected {expected}, got {got}")]
    DecisionLength {
        depth: u32,
        expected: usize,
        got: usize,
    },

    #[error("overlapping cubes {a} and {b}")]
    OverlappingCubes { a: usize, b: usize },

    #[error("incomplete sibling set under parent {parent:#x} at depth {depth}")]
    IncompleteSiblings { depth: u32, parent: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inconsistent config: {0}")]
    Config(String),

    #[error("{0}")]
    Runtime(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Attaches the offending file to an error.
    pub fn at(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, stripped of file context.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            e => e,
        }
    }
}
