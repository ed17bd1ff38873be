use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("solver error: {msg} (last residual {residual:e})")]
    Solver { msg: String, residual: f64 },
    #[error("model error: {0}")]
    Model(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("certificate unavailable: {0}")]
    CertificateUnavailable(String),
    #[error("integration error at step {step}: {msg}")]
    Integration { step: usize, msg: String },
    #[error("closure error: {0}")]
    Closure(String),
    #[error("malformed input: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn solver<T>(msg: impl Into<String>, residual: f64) -> Result<T> {
    Err(Error::Solver { msg: msg.into(), residual })
}
