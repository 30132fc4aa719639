use thiserror::Error;

/// Errors raised by the calibration primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// The NLL is monotone in the temperature, so no finite optimum exists.
    #[error("NOT_IDENTIFIABLE: {0}")]
    NotIdentifiable(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

pub type Result<T, E = CalibError> = std::result::Result<T, E>;
