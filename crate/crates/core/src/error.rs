use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid bandwidth ladder: {0}")]
    InvalidLadder(String),
    #[error("insufficient support: {found} points in the smallest window, {needed} required")]
    InsufficientSupport { needed: usize, found: usize },
    #[error("matrix is not positive definite: {0}")]
    SingularMatrix(String),
    #[error("information matrix at scale {scale} is singular")]
    SingularInformation { scale: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("mu = {0} is outside (0, 1/4)")]
    InvalidMu(f64),
    #[error("calibration diverged at threshold {step}")]
    CalibrationDiverged { step: usize },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("joint covariance of the first {k} scales is singular")]
    SingularJointCovariance { k: usize },
    #[error("small modeling bias fails at the first scale: Delta(1) = {delta1} > {budget}")]
    SmbViolatedAtFirstScale { delta1: f64, budget: f64 },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("truncation too coarse: {0}")]
    TruncationTooCoarse(String),
    #[error("enumeration budget of {budget} nodes exceeded; count lies in [{lower}, {upper}]")]
    BudgetExceeded { lower: u64, upper: u64, budget: u64 },
    #[error("degenerate spectrum: sigma = 0")]
    DegenerateSpectrum,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
