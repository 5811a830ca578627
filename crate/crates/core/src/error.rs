use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rate function is not unimodal for this MPR law (q_1 <= 2 q_2 <= ... <= M q_M fails) and the grid fallback is disabled")]
    NonUnimodal,

    #[error("root bracketing did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("utilization {rho} of class {class} is not below 1")]
    UnstableInput { class: usize, rho: f64 },

    #[error("class {0} has zero arrival rate")]
    ZeroArrival(usize),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no invertible Gaussian-integer matrix within search radius {0}")]
    SearchExhausted(u32),

    #[error("Gram matrix is not numerically positive definite")]
    CholeskyFail,

    #[error("{0} simultaneous users exceeds the enumeration limit of {1}")]
    TooManyUsers(usize, usize),

    #[error("invalid configuration: {}", format_violations(.0))]
    ConfigInvalid(Vec<Violation>),

    #[error("state space of {0} states exceeds the cap of {1}")]
    StateExplosion(usize, usize),

    #[error("Markov chain restricted to states reachable from the empty system is reducible")]
    Reducible,

    #[error("{0}")]
    InvalidArgument(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
