use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    Shape {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("invalid length for {what}: expected {expected}, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite function value at coordinate {coord} (offset {sign}h)")]
    NonFiniteEval { coord: usize, sign: char },
    #[error("non-finite {term} loss")]
    NonFiniteLoss { term: &'static str },
    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward pass requires a soft-assignment cache")]
    HardAssignmentBackward,
    #[error("adversarial loss needs at least two domains in the batch")]
    SingleDomain,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
    #[error(transparent)]
    Format(#[from] crate::io::FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
