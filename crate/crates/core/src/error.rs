use thiserror::Error;

/// Library-wide error type. Variants map onto the CLI exit-code contract:
/// input/schema problems exit 2, missing-calibration preconditions exit 3,
/// numerical failures exit 4.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("network schema violation: {0}")]
    Schema(String),

    #[error("Kron reduction failed: eliminated block is singular (buses {buses:?})")]
    SingularEliminatedBlock { buses: Vec<usize> },

    #[error("scenario load {load:.4} p.u. exceeds total generation capacity {capacity:.4} p.u.")]
    CapacityExceeded { load: f64, capacity: f64 },

    #[error("equilibrium solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    EquilibriumNotConverged { residual: f64, iterations: usize },

    #[error("numerical blowup at t = {time:.4} s (node {node})")]
    NumericalBlowup { time: f64, node: usize },

    #[error("N-1 calibration failed; {violations} contingency case(s) still produce events")]
    CalibrationFailure { violations: usize },

    #[error("emergency-response config is not calibrated for this network")]
    MissingCalibration,

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::InvalidInput(_)
            | CoreError::Schema(_)
            | CoreError::Io(_)
            | CoreError::Json(_) => 2,
            CoreError::MissingCalibration => 3,
            CoreError::SingularEliminatedBlock { .. }
            | CoreError::CapacityExceeded { .. }
            | CoreError::EquilibriumNotConverged { .. }
            | CoreError::NumericalBlowup { .. }
            | CoreError::CalibrationFailure { .. }
            | CoreError::DegenerateStatistics(_) => 4,
        }
    }
}
