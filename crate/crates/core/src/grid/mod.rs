//! Network model, AC power flow oracle, voltage sensitivities and the
//! linearized DSO constraint system.

mod admittance;
mod constraints;
mod network;
mod power_flow;
mod sensitivity;

pub use admittance::build_admittance;
pub use constraints::{ConstraintKind, DsoGrid, GridLimits, LinearizedConstraints, ProsumerBlock, RowLabel};
pub use network::{Bus, BusKind, Line, NetworkModel, PerUnitBase, SlackVoltage};
pub use power_flow::{
    solve_power_flow, Injections, OperatingPoint, PowerFlow, PowerFlowOptions, PowerFlowSolution,
};
pub use sensitivity::{compute_sensitivities, SensitivityMatrices};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid network model: {0}")]
    InvalidModel(String),
    #[error("unknown bus {0}")]
    UnknownBus(String),
    #[error("degenerate branch {0}-{1}: zero series impedance")]
    DegenerateBranch(String, String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("linearization point infeasible: power flow did not converge")]
    InfeasibleLinearization,
    #[error("cannot evaluate g: power flow did not converge")]
    OracleFailed,
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}
