use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("integration of `{name}` blew up at t = {t}")]
    IntegrationBlowup { name: String, t: f64 },

    #[error("time {t} outside table range [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),

    #[error("admissibility violated at t = {t}: {what} = {value}")]
    Admissibility {
        t: f64,
        what: &'static str,
        value: f64,
    },

    #[error("broker Riccati solution does not exist on [0, T] (blow-up at t = {t}); permanent impact outside the admissible range")]
    ExistenceViolation { t: f64 },

    #[error("filter degeneracy at t = {t}: {what}")]
    FilterDegeneracy { t: f64, what: &'static str },

    #[error("simulation blew up at step {step} (non-finite {field})")]
    SimulationBlowup { step: usize, field: &'static str },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::OutOfRange { .. }
        )
    }
}
