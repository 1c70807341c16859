use thiserror::Error;

/// Errors raised anywhere in the simulator, learners or harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("infeasible corruption budget {budget} (maximum {max})")]
    InfeasibleBudget { budget: f64, max: f64 },

    #[error("corruption budget exceeded by {excess:.3e} in rounds {rounds:?}")]
    BudgetViolation { excess: f64, rounds: Vec<usize> },

    #[error("mean loss table has a tied best action at state {state}")]
    GapDegenerate { state: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("comparator infeasible: {policies} deterministic policies exceed the cap {cap}")]
    ComparatorInfeasible { policies: f64, cap: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 2 for anything wrong with the input, 1 for a
    /// failure while running a valid experiment.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Parameter(_)
            | Error::Structure(_)
            | Error::InfeasibleBudget { .. }
            | Error::ComparatorInfeasible { .. }
            | Error::GapDegenerate { .. }
            | Error::Io(_) => 2,
            Error::Invariant(_)
            | Error::Numeric(_)
            | Error::Solver { .. }
            | Error::BudgetViolation { .. } => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
