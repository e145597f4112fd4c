use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants carry enough context to be reported on a single line by the CLI.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid Schatten order {0}; must be >= 1 or infinity")]
    InvalidOrder(f64),

    #[error("degenerate generator range: all g(y) are equal")]
    DegenerateRange,

    #[error("invalid generator parameters: {0}")]
    InvalidGenerator(String),

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal {off_diagonal:e})")]
    NoConvergence { sweeps: usize, off_diagonal: f64 },

    #[error("unstable step size: h = {step_size} >= 2 sigma_min = {limit}")]
    Unstable { step_size: f64, limit: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step-size tuning budget exhausted; best h = {best_step_size} with acceptance {best_acceptance}")]
    BudgetExhausted {
        best_step_size: f64,
        best_acceptance: f64,
    },

    #[error("sample covariance is rank deficient: {0}")]
    RankDeficient(String),

    #[error("oversampling ratio {0} must exceed 1")]
    OmegaTooSmall(f64),

    #[error("singular Wishart draw after {attempts} attempts")]
    SingularDraw { attempts: usize },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("singular preconditioner: {0}")]
    SingularPreconditioner(String),

    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize, trace: Vec<f64> },
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidSpectrum(_) => "invalid_spectrum",
            Error::InvalidOrder(_) => "invalid_order",
            Error::DegenerateRange => "degenerate_range",
            Error::InvalidGenerator(_) => "invalid_generator",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Unstable { .. } => "unstable",
            Error::OutOfRange(_) => "out_of_range",
            Error::InvalidConfig(_) => "invalid_config",
            Error::BudgetExhausted { .. } => "budget_exhausted",
            Error::RankDeficient(_) => "rank_deficient",
            Error::OmegaTooSmall(_) => "omega_too_small",
            Error::SingularDraw { .. } => "singular_draw",
            Error::NoRoot(_) => "no_root",
            Error::SingularPreconditioner(_) => "singular_preconditioner",
            Error::NonFinite { .. } => "non_finite",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
