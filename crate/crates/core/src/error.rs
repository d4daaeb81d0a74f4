use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("inverted element {element} at quadrature point {point} (J = {jacobian:e})")]
    InvertedElement {
        element: usize,
        point: usize,
        jacobian: f64,
    },

    #[error("positivity violation in element {element} at point {point}: {what} = {value:e}")]
    Positivity {
        element: usize,
        point: usize,
        what: &'static str,
        value: f64,
    },

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("time step failed: {0}")]
    StepFailure(String),

    #[error("time step control aborted: {0}")]
    StepControl(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
