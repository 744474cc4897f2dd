use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid truncation: {0}")]
    InvalidSpec(String),

    #[error("truncation too small for {what}: leakage {leakage:.3e} exceeds bound {bound:.1e}")]
    Truncation {
        what: String,
        leakage: f64,
        bound: f64,
    },

    #[error("index {index} out of range for {len} levels")]
    Index { index: usize, len: usize },

    #[error("layout mismatch: expected {expected:?}, found {found:?}")]
    LayoutMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("operator is not Hermitian (max |M - M†| = {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("invalid parameter: {0}")]
    Domain(String),

    #[error("direction cosines must satisfy cx² + cy² + cz² = 1 (got {norm_sq})")]
    DirectionCosines { norm_sq: f64 },

    #[error("near-degenerate coupled levels {left} and {right} (gap {gap:.3e})")]
    Degeneracy {
        left: String,
        right: String,
        gap: f64,
    },

    #[error("dimension {dim} exceeds the dense-evolution limit of {max}; reduce the truncation")]
    DimensionGuard { dim: usize, max: usize },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("invalid segmentation: {0}")]
    Segmentation(String),

    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for the numerical-guard family (truncation, degeneracy, size).
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::Truncation { .. } | Error::Degeneracy { .. } | Error::DimensionGuard { .. }
        )
    }
}
