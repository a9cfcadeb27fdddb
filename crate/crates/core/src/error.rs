use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid target dimension {d} (must be in 1..={max})")]
    InvalidDimension { d: usize, max: usize },

    #[error("configuration error: {0}")]
    ConfigurationError(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("degenerate protected class: {0}")]
    DegenerateProtectedClass(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("schema error: {0}")]
    SchemaError(String),

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("all feature columns are constant")]
    DegenerateFeatures,

    #[error("stratification error: {0}")]
    StratificationError(String),

    #[error(
        "solver did not converge after {iterations} iterations \
         (primal {primal_residual:e}, dual {dual_residual:e}, gap {duality_gap:e})"
    )]
    SolverNonConvergence { iterations: usize, primal_residual: f64, dual_residual: f64, duality_gap: f64 },

    #[error("solver reported {0}")]
    SolverStatus(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the input data rather than configuration or the solver.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidMatrix(_)
                | Error::DimensionMismatch(_)
                | Error::DegenerateProtectedClass(_)
                | Error::DegenerateVariance(_)
                | Error::DegenerateLabels(_)
                | Error::EmptyCluster(_)
                | Error::SchemaError(_)
                | Error::EmptyDataset(_)
                | Error::DegenerateFeatures
                | Error::StratificationError(_)
                | Error::NotPositiveSemidefinite { .. }
                | Error::InvalidKernel(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }

    pub fn is_solver_error(&self) -> bool {
        matches!(self, Error::SolverNonConvergence { .. } | Error::SolverStatus(_) | Error::NumericalFailure(_))
    }
}
