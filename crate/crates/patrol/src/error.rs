use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("map parse error: {0}")]
    MapParse(String),
    #[error("position ({0}, {1}) is not on a navigable cell")]
    NotNavigable(f64, f64),
    #[error("cell index {0} is out of range or not navigable")]
    BadCell(usize),
    #[error("sample covariance is singular beyond jitter repair")]
    SingularCovariance,
    #[error("sample set contains a sample from the future (t={t} < t_meas={t_meas})")]
    FutureSample { t: u32, t_meas: u32 },
    #[error("episode is already done")]
    EpisodeDone,
    #[error("no valid action available from the current position")]
    AllActionsInvalid,
    #[error("replay buffer has {have} experiences, need {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
