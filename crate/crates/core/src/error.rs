use thiserror::Error;

use crate::estimation::EstimationResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("unknown state {0}")]
    UnknownState(usize),

    #[error("destination `{destination}` is unreachable from `{origin}`")]
    UnreachableDestination { origin: String, destination: String },

    #[error("negative cost cycle detected")]
    NegativeCycleDetected,

    #[error("negative cost {cost} on arc {arc}")]
    NegativeCostInput { arc: usize, cost: f64 },

    #[error("network contains a cycle; backward induction needs an acyclic state graph")]
    CycleDetected,

    #[error("value function is infeasible at beta = {beta:?}: {reason}")]
    InfeasibleValueFunction { beta: Vec<f64>, reason: String },

    #[error("singular linear system (zero pivot at column {column})")]
    SingularSystem { column: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("invalid transition from state {from} to state {to}")]
    InvalidTransition { from: usize, to: usize },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("path sampling exceeded {max_steps} steps")]
    MaxStepsExceeded { max_steps: usize },

    #[error("chosen path of observation {observation} is not in its choice set")]
    ChosenPathMissing { observation: usize },

    #[error("hessian is not invertible (flat or collinear attributes)")]
    NonInvertibleHessian,

    #[error("every trial step of the line search was infeasible")]
    AllStepsInfeasible,

    #[error("estimation did not converge after {} iterations", .0.iterations)]
    EstimationDidNotConverge(Box<EstimationResult>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn infeasible(beta: &[f64], reason: impl Into<String>) -> Self {
        Error::InfeasibleValueFunction {
            beta: beta.to_vec(),
            reason: reason.into(),
        }
    }
}
