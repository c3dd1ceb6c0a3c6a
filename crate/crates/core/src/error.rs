use thiserror::Error;

/// Errors raised by the numerical layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("bracket function rejected: {0}")]
    InvalidBracket(String),

    #[error("Sobolev constant self-test failed for N = {n}, p = {p}: closed form {closed}, quadrature {quadrature}")]
    SobolevSelfTest {
        n: usize,
        p: f64,
        closed: f64,
        quadrature: f64,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("continuation failed at step {step} (p = {p}), pair {pair}: {reason}")]
    Continuation {
        step: usize,
        p: f64,
        pair: usize,
        reason: String,
    },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
