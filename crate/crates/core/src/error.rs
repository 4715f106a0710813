use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid theta base {0}: must be positive and different from 1")]
    InvalidBase(f64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid scale {0}: extrapolation requires s >= 1")]
    InvalidScale(f64),
    #[error("invalid diffusion time {0}: must lie in [0, 1]")]
    InvalidTime(f64),
    #[error("invalid frequency {0}: must be positive")]
    InvalidFrequency(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("progression map requires spectra at t = {0}")]
    MissingEndpoint(f64),
    #[error("power-law fit failed: {0}")]
    Fit(String),
    #[error("numeric error at {location}: {detail}")]
    Numeric { location: String, detail: String },
    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("empty band [{0}, {1}]")]
    Band(f64, f64),
    #[error("invalid extrapolation: test side {test} must exceed train side {train}")]
    InvalidExtrapolation { train: usize, test: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }
}
