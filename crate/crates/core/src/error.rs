use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("duplicate register id `{0}`")]
    DuplicateRegister(String),
    #[error("bad permutation: {0}")]
    BadPermutation(String),
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("map is not an isometry (residual {0:.3e})")]
    NonIsometry(f64),

    #[error("tree is not connected")]
    NotConnected,
    #[error("graph contains a cycle")]
    HasCycle,
    #[error("bad edge: {0}")]
    BadEdge(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("{what} has {n} elements, enumeration bound is {max}")]
    TooLarge { what: &'static str, n: usize, max: usize },
    #[error("labeling is not ascending: {0}")]
    NotAscending(String),
    #[error("unknown edge {0}")]
    UnknownEdge(String),

    #[error("code matrix is not an isometry (residual {0:.3e})")]
    NotIsometry(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown builtin code `{0}`")]
    UnknownBuiltin(String),
    #[error("code parties do not match tree vertices: {0}")]
    PartyMismatch(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    #[error("insufficient resource: need Schmidt rank {needed}, got {given}")]
    InsufficientResource { needed: usize, given: usize },
    #[error("merge synthesis failed: {0}")]
    SynthesisFailed(String),
    #[error("branch has zero probability ({0:.3e})")]
    ZeroProbabilityBranch(f64),

    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
}

impl Error {
    /// Variant name, for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DuplicateRegister { .. } => "DuplicateRegister",
            Error::BadPermutation { .. } => "BadPermutation",
            Error::UnknownRegister { .. } => "UnknownRegister",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonIsometry { .. } => "NonIsometry",
            Error::NotConnected => "NotConnected",
            Error::HasCycle => "HasCycle",
            Error::BadEdge { .. } => "BadEdge",
            Error::UnknownVertex { .. } => "UnknownVertex",
            Error::TooLarge { .. } => "TooLarge",
            Error::NotAscending { .. } => "NotAscending",
            Error::UnknownEdge { .. } => "UnknownEdge",
            Error::NotIsometry { .. } => "NotIsometry",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::UnknownBuiltin { .. } => "UnknownBuiltin",
            Error::PartyMismatch { .. } => "PartyMismatch",
            Error::NumericalDegeneracy { .. } => "NumericalDegeneracy",
            Error::InsufficientResource { .. } => "InsufficientResource",
            Error::SynthesisFailed { .. } => "SynthesisFailed",
            Error::ZeroProbabilityBranch { .. } => "ZeroProbabilityBranch",
            Error::Parse { .. } => "Parse",
            Error::Schema { .. } => "Schema",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
