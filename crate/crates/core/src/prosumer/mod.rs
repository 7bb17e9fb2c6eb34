//! Prosumer resources and the local optimization problems solved behind the
//! meter: the response to an advertised price signal, the tariff-only
//! baseline and the real-time tracking control.

mod problem;
mod rt;
mod signal;

pub use problem::{
    build_prosumer_problem, local_cost_min, soc_trajectory, x_update, BessSpec, BessTrajectory, ProsumerProblem,
    ProsumerResponse, ProsumerSpec, PvSpec, Resource, ResourceSchedule, CURTAILMENT_REGULARIZATION, REGULARIZATION,
};
pub use rt::{rt_control, RtInput};
pub use signal::{tariff_vector, PriceSignal};

use thiserror::Error;

use crate::qp::{QpError, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProsumerError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid prosumer specification: {0}")]
    InvalidSpec(String),
    #[error("state out of bounds: soc {0}")]
    StateOutOfBounds(f64),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("prosumer problem not solved to optimality: {0:?}")]
    NotOptimal(QpStatus),
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::qp::dot(a, b)
}

#[cfg(test)]
mod tests;
