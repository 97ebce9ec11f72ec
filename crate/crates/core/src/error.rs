use alloc::string::String;

/// Errors raised by the laboratory.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{function}: argument {value} outside its domain ({expected})")]
    Domain {
        function: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("non-finite {what} at path {path}, step {step}")]
    NonFinite {
        what: &'static str,
        path: usize,
        step: usize,
    },
    #[error("fixed-point iteration for Y did not converge at step {step} (residual {residual:e})")]
    NonConvergent { step: usize, residual: f64 },
    #[error("exponential weight overflow at path {path}, step {step}; truncate the coefficients")]
    WeightOverflow { path: usize, step: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("time {value} is not aligned with the grid (dt = {dt})")]
    OffGrid { value: f64, dt: f64 },
    #[error("model does not provide control derivatives")]
    MissingControlDerivatives,
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
