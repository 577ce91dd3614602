use nalgebra::DVector;
use thiserror::Error;

pub type Result<T, E = GelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GelError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("evaluation error at row {row}: {message}")]
    Evaluation { row: usize, message: String },

    /// The inner supremum is unbounded at this θ: zero is not inside the
    /// region reachable by admissible weights.
    #[error("infeasible at theta: inner supremum is unbounded (ascent direction {direction:?})")]
    InfeasibleAtTheta { direction: Vec<f64> },

    #[error("globally infeasible: no point of the multistart grid admits a bounded inner problem")]
    GloballyInfeasible,

    #[error("conditioning failure in {context}: smallest eigenvalue estimate {min_eigenvalue:e}")]
    Conditioning {
        context: String,
        min_eigenvalue: f64,
    },

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("experiment aborted: {excluded} of {total} replications excluded")]
    TooManyExclusions { excluded: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GelError {
    pub(crate) fn infeasible(direction: &DVector<f64>) -> Self {
        GelError::InfeasibleAtTheta {
            direction: direction.iter().copied().collect(),
        }
    }

    /// Infeasibility outcomes (local or global) as opposed to numerical failures.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            GelError::InfeasibleAtTheta { .. } | GelError::GloballyInfeasible
        )
    }
}
