use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not Hermitian (max |A - A^H| = {0:.3e})")]
    NotHermitian(f64),

    #[error("state is not normalized (norm = {0})")]
    NotNormalized(f64),

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("invalid factor selection {factors:?} for dims {dims:?}")]
    InvalidFactors { factors: Vec<usize>, dims: Vec<usize> },

    #[error("state lies entirely outside the code space")]
    FullyLeaked,

    #[error("ancilla is not prepared in |0>")]
    AncillaNotReset,

    #[error("post-selection survival probability reached zero at step {step}")]
    ZeroSurvival { step: usize },

    #[error("norm drifted by {drift:.3e} at step {step}")]
    NormDrift { step: usize, drift: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot fit power law: {0}")]
    InvalidFit(String),
}
