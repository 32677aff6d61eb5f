use alloc::string::String;
use core::fmt;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration violates its invariants.
    Config(String),
    /// Tensor or vector dimensions disagree.
    Shape(String),
    /// A non-finite value appeared in an activation or result.
    Numerics(String),
    /// An image span is empty or falls outside the key range.
    Span { start: usize, end: usize, keys: usize },
    /// A distribution that must be normalized has zero total mass.
    ZeroMass,
    /// A statistical test received a sample with no information.
    DegenerateSample(String),
    /// An operation that requires data received none.
    EmptyInput,
    /// Throughput measurement preconditions were not met.
    Measurement(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Numerics(msg) => write!(f, "non-finite value: {msg}"),
            Error::Span { start, end, keys } => {
                write!(f, "image span [{start}, {end}) invalid for {keys} keys")
            }
            Error::ZeroMass => f.write_str("distribution has zero total mass"),
            Error::DegenerateSample(msg) => write!(f, "degenerate sample: {msg}"),
            Error::EmptyInput => f.write_str("empty input"),
            Error::Measurement(msg) => write!(f, "measurement error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
