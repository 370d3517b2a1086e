use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("psi does not satisfy the coupling hypothesis: {0}")]
    PsiNotDominated(String),

    #[error("no nontrivial extinction band for R = 0: the walk always dies out")]
    AlwaysExtinct,

    #[error("phi is not a contraction on [theta - {eps}, theta + {eps}]: kappa = {kappa}")]
    ContractionFails { eps: f64, kappa: f64 },

    #[error("kernel support {support} exceeds the zero-padded window (half-width {half_width})")]
    KernelExceedsWindow { support: i64, half_width: i64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures caused by the caller's input rather than by the code.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::GeometryMismatch(_)
                | Error::PsiNotDominated(_)
                | Error::AlwaysExtinct
                | Error::ContractionFails { .. }
                | Error::KernelExceedsWindow { .. }
                | Error::Snapshot(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
