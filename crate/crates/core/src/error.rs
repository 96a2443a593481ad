//! Error type shared by every module of the core crate.

use alloc::string::String;
use core::fmt;

/// Contract violations surfaced by core operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor shapes incompatible with the operation's contract.
    DimMismatch(String),
    /// `backward` was asked to differentiate a non-scalar node.
    NonScalarLoss,
    /// A tensor constructor was handed NaN or infinite values.
    NonFinite(String),
    /// A recursive relation matrix had the wrong shape for its layer index.
    WrongLayerShape(String),
    /// Statistics over fewer samples than the estimator needs.
    TooFewSamples { got: usize, need: usize },
    /// An attribute column is constant and cannot be regressed.
    DegenerateAttributes(String),
    /// A dimension slice lies outside the matrix.
    IndexOutOfRange(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::NonScalarLoss => write!(f, "backward requires a scalar loss node"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::WrongLayerShape(msg) => write!(f, "wrong layer shape: {msg}"),
            Error::TooFewSamples { got, need } => {
                write!(f, "too few samples: got {got}, need at least {need}")
            }
            Error::DegenerateAttributes(msg) => write!(f, "degenerate attributes: {msg}"),
            Error::IndexOutOfRange(msg) => write!(f, "index out of range: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
