use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Two shapes that must agree do not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    NonFinite(&'static str),
    LabelOutOfRange { label: usize, classes: usize },
    /// Backward called without a matching forward.
    MissingCache(&'static str),
    InvalidConfig(String),
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },
    RatiosNotNormalized(f64),
    Empty(&'static str),
    /// Batch statistics need at least two rows.
    BatchTooSmall { rows: usize },
    OutOfOrderEpoch { expected: usize, found: usize },
    LengthMismatch { left: usize, right: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch: {what} expected {expected}, found {found}"
            ),
            Error::NonFinite(what) => write!(f, "non-finite {what}"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label out of range: {label} not in [0, {classes})")
            }
            Error::MissingCache(what) => write!(f, "missing cache: {what} backward before forward"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::ClassTooSmall {
                class,
                count,
                needed,
            } => write!(
                f,
                "class {class} has {count} records, at least {needed} required"
            ),
            Error::RatiosNotNormalized(sum) => write!(f, "split ratios sum to {sum}, expected 1"),
            Error::Empty(what) => write!(f, "empty {what}"),
            Error::BatchTooSmall { rows } => {
                write!(f, "batch of {rows} rows too small for batch statistics")
            }
            Error::OutOfOrderEpoch { expected, found } => {
                write!(f, "out-of-order epoch: expected {expected}, found {found}")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn ensure_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
