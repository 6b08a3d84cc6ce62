use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by operation {index} ({op})")]
    NonFinite { index: usize, op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("kernel weights underflowed: query lies far outside the latent support")]
    DensityUnderflow,

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("all {0} restarts diverged")]
    AllRestartsDiverged(usize),

    #[error("panel error: {0}")]
    Panel(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
