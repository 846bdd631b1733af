//! Error type shared across the crate.
//!
//! Variants split into two broad families that callers (notably the CLI)
//! treat differently: *input* problems — missing or malformed files, shape
//! mismatches, bad configuration — and *numeric* problems that only surface
//! once the arithmetic runs, such as a degenerate histogram or a diverged
//! training loss.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Header line of a container file failed to parse or declared an
    /// impossible layout (zero dimension, unknown plane name, ...).
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    /// File ended before the payload declared by its header.
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    /// Two grids that must share a shape do not, or an operand has a shape
    /// the operation cannot accept.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Anything else wrong with inputs before numbers start flowing:
    /// bad config values, unknown names, malformed records.
    #[error("bad input: {0}")]
    BadInput(String),

    /// Input is well-formed but numerically unusable for the requested
    /// operation (all-equal histogram, empty pixel window, no positive
    /// labels, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A training loop produced a non-finite loss or parameter.
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    /// True for errors of the numeric family (degenerate data, divergence),
    /// false for input/IO problems. The CLI maps the two families to
    /// different exit codes.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Degenerate(_) | Error::Diverged(_))
    }
}
