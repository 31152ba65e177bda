use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    /// A Cholesky pivot fell below the relative threshold. Usually means the
    /// ridge term is missing or too small.
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("degenerate direction: linearized endpoints coincide")]
    DegenerateDirection,
    #[error("query covariance is degenerate")]
    DegenerateQueryCovariance,
    #[error("membership feature is constant")]
    DegenerateFeature,
    #[error("all path snapshots are identical")]
    DegeneratePaths,
    #[error("invalid covariance: {0}")]
    InvalidCovariance(&'static str),
    #[error("invalid specification: {0}")]
    InvalidSpec(&'static str),
}

impl Error {
    /// True for failures that come from the numbers rather than from how
    /// the caller wired things together.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Singular
                | Error::Divergence { .. }
                | Error::DegenerateDirection
                | Error::DegenerateQueryCovariance
                | Error::DegenerateFeature
                | Error::DegeneratePaths
        )
    }
}
