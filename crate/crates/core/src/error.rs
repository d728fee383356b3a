use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A cell whose value falls outside the support of its GEV distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportViolation {
    pub leaf: usize,
    pub site: usize,
    pub replicate: usize,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("alpha = 1 is a point mass and has no density")]
    DegenerateStable,
    #[error("invalid dependence tree: {}", .0.join("; "))]
    InvalidTree(Vec<String>),
    #[error("unknown leaf `{0}`")]
    UnknownLeaf(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("structural mismatch: {0}")]
    Structure(String),
    #[error("GEV support violated in {} cell(s), first at leaf {} site {} replicate {}",
        .0.len(), .0[0].leaf, .0[0].site, .0[0].replicate)]
    Support(Vec<SupportViolation>),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
