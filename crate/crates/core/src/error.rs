use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An RK4 stage or update produced NaN or infinity.
    #[error("non-finite value in RK4 step")]
    NonFinite,

    #[error("solver diverged at t = {at_time}")]
    Diverged { at_time: f64 },

    #[error("moment system is singular for dimension {dim}, degree {degree}")]
    SingularMoments { dim: usize, degree: usize },

    #[error("kernel matrix factorization failed: {0}")]
    FactorizationFailed(String),

    #[error("primal solve diverged; no gradient available")]
    DivergedNoGradient,

    #[error("no feasible step from the starting point")]
    StalledAtInfeasible,

    #[error("no optimization stage reached a finite single-shooting loss")]
    AllStagesFailed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
