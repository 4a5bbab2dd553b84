use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("log of non-positive value {value} at element {index}")]
    LogNonPositive { index: usize, value: f64 },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("NaN gradient for parameter `{0}`")]
    NanGradient(String),
    #[error("{what} out of range: {value} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("NaN produced at reverse diffusion step {0}")]
    NanAtStep(usize),
    #[error("training diverged (loss is not finite) at step {step}: {config}")]
    Diverged { step: usize, config: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("MC acquisition requires dropout")]
    DropoutRequired,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
