use std::fmt;

use crate::feature::Rect;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("extractor failure: {0}")]
    ExtractorFailure(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("region {region} out of bounds for a {width}x{height} image")]
    RegionOutOfBounds { region: Rect, width: u32, height: u32 },
    #[error("degenerate image: {0}")]
    DegenerateImage(String),
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no positive labels")]
    NoPositives,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("class `{0}` has no samples")]
    EmptyClassRow(String),
    #[error("relevant set is empty")]
    EmptyRelevantSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        Error::MalformedFile(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Non-fatal conditions reported alongside a successful result.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Requested PCA dimension exceeded `min(n - 1, d)`.
    PcaClamped { requested: usize, used: usize },
    /// Fewer eigenvalues than requested exceeded epsilon.
    RankDeficient { requested: usize, kept: usize },
    /// A one-vs-all or one-vs-one subproblem had a single class and was skipped.
    SubproblemSkipped { name: String },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::PcaClamped { requested, used } => {
                write!(f, "pca dimension clamped from {requested} to {used}")
            }
            Warning::RankDeficient { requested, kept } => {
                write!(f, "rank deficient data: kept {kept} of {requested} components")
            }
            Warning::SubproblemSkipped { name } => {
                write!(f, "subproblem `{name}` has a single class, skipped")
            }
        }
    }
}
