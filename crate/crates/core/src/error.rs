use thiserror::Error;

/// Errors raised by scoring, calibration, estimation and ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("sample set needs at least 2 values, got {0}")]
    TooFewSamples(usize),
    #[error("record payload does not match score family {expected}")]
    PayloadMismatch { expected: &'static str },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("probability {name} = {value} outside (0, 1)")]
    Probability { name: &'static str, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("calibration was fitted with a different score spec")]
    SpecMismatch,
    #[error("objective is infinite at the initial bias {init}; the calibration is degenerate at this alpha (try a larger alpha or --init zero)")]
    InfiniteObjective { init: f64 },
    #[error("series too short: {len} points, need more than {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn probability(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(Error::Probability { name, value })
    }
}
