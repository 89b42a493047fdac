use alloc::string::String;

/// Errors raised by model validation, inference and fitting.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("feature series is empty")]
    EmptySeries,
    #[error("front-end configuration mismatch: model expects {model}, features carry {features}")]
    ConfigMismatch { model: String, features: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: zero variance input")]
    ZeroVariance,
    #[error("non-finite input value")]
    NonFinite,
    #[error("no grid point produced a defined interaction metric")]
    NoDefinedGridPoint,
    #[error("least-squares system is singular")]
    Singular,
}

pub type Result<T> = core::result::Result<T, CoreError>;
