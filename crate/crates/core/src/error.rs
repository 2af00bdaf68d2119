use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("construction error: {0}")]
    Construction(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("point {0:?} lies outside the domain")]
    OutsideDomain(Vec<f64>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("incompatible probe: {0}")]
    IncompatibleProbe(String),

    #[error("amplitude integral vanishes (|R| = {0:.3e})")]
    VanishingAmplitude(f64),

    #[error("sources collapsed or N overestimated (singular value ratio {0:.3e})")]
    RankDeficient(f64),

    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical kernel (solver, factorization, degeneracy).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::Factorization(_)
                | Error::VanishingAmplitude(_)
                | Error::RankDeficient(_)
        )
    }
}
