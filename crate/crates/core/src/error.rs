use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box ({x0}, {y0}, {x1}, {y1}): negative extent")]
    InvalidBox { x0: f64, y0: f64, x1: f64, y1: f64 },

    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("{n_pred} predictions cannot cover {n_gt} ground truths")]
    TooFewPredictions { n_pred: usize, n_gt: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("assignments disagree on the ground-truth set: {0}")]
    AssignmentMismatch(String),

    #[error("brute-force enumeration limited to {limit} ground truths, got {n_gt}")]
    TooLargeForBruteForce { n_gt: usize, limit: usize },

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("invalid `{field}`: {message}")]
    Format { field: String, message: String },
}

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            lo: 0.0,
            hi: 1.0,
        })
    }
}
