use alloc::string::String;

/// Errors raised by the solvers, the auxiliary system and the learning loops.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("control Hessian at t={t} is not positive definite")]
    NotPositiveDefinite { t: usize },

    #[error("H_uu at t={t} is singular or ill-conditioned (condition estimate {cond:.3e})")]
    SingularControlHessian { t: usize, cond: f64 },

    #[error("I + P R at t={t} is singular")]
    SingularRiccati { t: usize },

    #[error("non-finite value encountered at step {last_finite} + 1")]
    Diverged { last_finite: usize },

    #[error("finite-difference oracle hit a non-finite value at coordinate {coordinate}")]
    OracleFailure { coordinate: usize },

    #[error("unknown environment `{name}` (valid: {valid})")]
    UnknownEnv { name: String, valid: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(axis: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { axis, expected, found })
    }
}
