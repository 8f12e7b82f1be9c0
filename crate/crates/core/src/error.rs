use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Each variant maps onto a distinct CLI exit code (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid partition: {0}")]
    Partition(#[from] PartitionError),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::DegenerateData(_) => "degenerate_data",
            Error::EmptyInput(_) => "empty_input",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Partition(_) => "partition",
            Error::Numerical(_) => "numerical",
            Error::Divergence { .. } => "divergence",
            Error::Protocol(_) => "protocol",
            Error::Format(_) => "malformed_file",
            Error::Io(_) => "io",
        }
    }
}

/// Ways a visible/masked split can break the partition law.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("index {0} is both visible and masked")]
    Overlap(usize),
    #[error("index {0} is neither visible nor masked")]
    NotCovered(usize),
    #[error("index {index} out of range for {total} voxels")]
    OutOfRange { index: usize, total: usize },
    #[error("index list is not strictly increasing at position {0}")]
    Unsorted(usize),
    #[error("visible set is empty")]
    EmptyVisible,
    #[error("masked set is empty")]
    EmptyMasked,
}

pub type Result<T> = std::result::Result<T, Error>;
