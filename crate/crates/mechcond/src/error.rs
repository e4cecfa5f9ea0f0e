use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("spectrum must be strictly positive; {count} offending bins, first at omega = {first_omega} rad/s")]
    NonPositiveSpectrum { count: usize, first_omega: f64 },
    #[error("subset is empty")]
    EmptySubset,
    #[error("mode index {0} out of range")]
    ModeIndex(usize),
    #[error("no shot-noise floor configured")]
    NoShotFloor,
    #[error("trace too short: {len} samples, need at least {need}")]
    TraceTooShort { len: usize, need: usize },
    #[error("sample period {data} s does not match filter grid period {grid} s")]
    SamplePeriodMismatch { data: f64, grid: f64 },
    #[error("no admissible roll-off frequency at tolerance {0}")]
    NoAdmissibleRollOff(f64),
    #[error("negative variance {0:e}; grid is too coarse for the model")]
    NegativeVariance(f64),
    #[error("fit did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
