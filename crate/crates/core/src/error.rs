use thiserror::Error;

/// Errors raised by the toolkit. Every fallible operation in the crate returns
/// this type so that callers (the CLI in particular) can map failures onto
/// stable error codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("point {point:?} lies outside the domain box")]
    Domain { point: Vec<f64> },

    #[error("invalid structure: J^2 + I has residual {residual:.3e} (tolerance {tolerance:.3e})")]
    InvalidStructure { residual: f64, tolerance: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-generic configuration: {what} (computed rank {rank})")]
    NonGeneric { what: String, rank: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("polynomial refit residual {residual:.3e} exceeds {tolerance:.3e}; try a higher degree")]
    Refit { residual: f64, tolerance: f64 },

    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    #[error("no-complex-structure: {0}")]
    NoComplexStructure(SpectrumKind),

    #[error("degenerate web: the composite map is proportional to the identity")]
    DegenerateWeb,

    #[error("parse error: {0}")]
    Parse(String),
}

/// Why a web admits no compatible complex structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumKind {
    /// Two distinct real eigenvalues.
    RealSimple,
    /// A non-diagonalizable block (double eigenvalue, not a multiple of the
    /// identity) within the discriminant band.
    JordanBox,
}

impl std::fmt::Display for SpectrumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpectrumKind::RealSimple => f.write_str("real simple spectrum"),
            SpectrumKind::JordanBox => f.write_str("Jordan box"),
        }
    }
}

impl Error {
    /// Short machine-readable code, used in CLI reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Domain { .. } => "domain",
            Error::InvalidStructure { .. } => "invalid-structure",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::NonGeneric { .. } => "non-generic",
            Error::Argument(_) => "argument",
            Error::Refit { .. } => "refit",
            Error::SingularConfiguration(_) => "singular-configuration",
            Error::NoComplexStructure(_) => "no-complex-structure",
            Error::DegenerateWeb => "degenerate-web",
            Error::Parse(_) => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
