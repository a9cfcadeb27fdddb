use serde_json::json;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("replay mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Core(#[from] fairpca::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(fairpca::Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(fairpca::Error::Csv(e))
    }
}

impl CliError {
    /// 2 configuration, 3 data, 4 solver non-convergence, 1 replay mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Mismatch(_) => 1,
            CliError::Core(e) if e.is_solver_error() => 4,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            4 => "solver",
            _ => "mismatch",
        }
    }

    /// Single-line JSON for `--json-errors`.
    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() });
        if let CliError::Core(fairpca::Error::SolverNonConvergence {
            iterations,
            primal_residual,
            dual_residual,
            duality_gap,
        }) = self
        {
            v["residuals"] = json!({
                "iterations": iterations,
                "primal": primal_residual,
                "dual": dual_residual,
                "gap": duality_gap,
            });
        }
        v.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(fairpca::Error::EmptyDataset("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(fairpca::Error::InvalidDimension { d: 9, max: 3 }).exit_code(), 2);
        let solver = CliError::from(fairpca::Error::SolverNonConvergence {
            iterations: 10,
            primal_residual: 1e-2,
            dual_residual: 1e-3,
            duality_gap: 1e-4,
        });
        assert_eq!(solver.exit_code(), 4);
        let v: serde_json::Value = serde_json::from_str(&solver.to_json()).unwrap();
        assert_eq!(v["error"], "solver");
        assert_eq!(v["residuals"]["iterations"], 10);
    }
}
