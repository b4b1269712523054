use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("empty file or dataset")]
    EmptyDataset,

    #[error("line {line}: cannot parse {value:?} as a number")]
    NonNumeric { line: usize, value: String },

    #[error("line {line}: non-finite feature value {value:?}")]
    NonFiniteFeature { line: usize, value: String },

    #[error("line {line}: label {value:?} is not 0 or 1")]
    LabelOutOfRange { line: usize, value: String },

    #[error("line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("target data requires a `label` column")]
    MissingLabelColumn,

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("dimensionality mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("all labels belong to a single class")]
    SingleClass,

    #[error("target block has no positive samples")]
    NoPositiveTargets,

    #[error("target block has no negative samples")]
    NoNegativeTargets,

    #[error("source block needs at least two samples to hold both classes")]
    InsufficientSource,

    #[error("kernel matrix is not positive semidefinite (shifted by {shift:e})")]
    NotPsd { shift: f64 },

    #[error("kernel matrix contains non-finite entries")]
    NonFiniteKernel,

    #[error("dual solver hit the iteration cap of {iterations} with KKT violation {violation:e}")]
    IterationCap { iterations: usize, violation: f64 },

    #[error("invalid kernel count {0}; expected one of 4, 8, 12, 16")]
    InvalidKernelCount(usize),

    #[error("requested {requested} positives but only {available} are available")]
    InsufficientPositives { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trial with seed {seed} failed: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("model serialization: {0}")]
    Serialization(String),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::EmptyDataset => "EmptyDataset",
            Error::NonNumeric { .. } => "NonNumeric",
            Error::NonFiniteFeature { .. } => "NonFiniteFeature",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::RaggedRow { .. } => "RaggedRow",
            Error::MissingLabelColumn => "MissingLabelColumn",
            Error::Csv(_) => "Csv",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::SingleClass => "SingleClass",
            Error::NoPositiveTargets => "NoPositiveTargets",
            Error::NoNegativeTargets => "NoNegativeTargets",
            Error::InsufficientSource => "InsufficientSource",
            Error::NotPsd { .. } => "NotPsd",
            Error::NonFiniteKernel => "NonFiniteKernel",
            Error::IterationCap { .. } => "IterationCap",
            Error::InvalidKernelCount(_) => "InvalidKernelCount",
            Error::InsufficientPositives { .. } => "InsufficientPositives",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Trial { source, .. } => source.kind(),
            Error::Serialization(_) => "Serialization",
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
