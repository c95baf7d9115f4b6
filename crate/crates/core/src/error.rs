use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("queue error: {0}")]
    Queue(String),
    #[error("no admissible channel after {redraws} redraws; r_eps = {r_eps} is likely mis-scaled")]
    RedrawCapExceeded { redraws: usize, r_eps: f64 },
    #[error("fixed point diverged: d = {d} exceeds guard {guard}")]
    FixedPointDiverged { d: f64, guard: f64 },
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
