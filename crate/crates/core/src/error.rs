use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("ill-conditioned regression ({0}); use a regularizer lambda > 0")]
    IllConditioned(String),

    #[error("singular conditioning at t = {t}: zero prior variance and zero desired variance")]
    SingularConditioning { t: f64 },

    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    CovarianceRepair { min_eigenvalue: f64 },

    #[error("stem of fruit {fruit} is too short ({length} m) to clear a gripper radius of {radius} m")]
    GeometryInfeasible { fruit: usize, length: f64, radius: f64 },

    #[error("invalid stem {0}")]
    InvalidStem(String),

    #[error("unknown cluster preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown fruit id {0}")]
    UnknownFruit(usize),

    #[error("schedule overflow: {needed} time slots needed, timing preset has {available}")]
    ScheduleOverflow { needed: usize, available: usize },

    #[error("gripper jammed fruit {fruit} at tick {tick}")]
    Jam { tick: usize, fruit: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_)
            | Error::InsufficientData(_)
            | Error::DegenerateTrajectory(_)
            | Error::InvalidStem(_)
            | Error::UnknownPreset(_)
            | Error::UnknownFruit(_)
            | Error::ScheduleOverflow { .. }
            | Error::GeometryInfeasible { .. }
            | Error::Parse { .. } => ErrorKind::Validation,
            Error::IllConditioned(_)
            | Error::SingularConditioning { .. }
            | Error::CovarianceRepair { .. }
            | Error::Jam { .. } => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}
