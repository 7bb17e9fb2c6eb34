//! The DSO side of the coordination: an ADMM sharing loop over the
//! linearized grid constraints that turns multipliers into per-prosumer
//! quadratic price signals.

mod admm;
mod central;
mod run;

pub use admm::{
    adapt_rho, compute_compensation, dual_update, extract_price_signal, init_state, price_signal_with_rho, residuals,
    z_update, AdmmState, IterationRecord, Residuals,
};
pub use central::{centralized_optimum, CentralSolution};
pub use run::{baseline, iterate, responses_at_rho, run_coordination, Agent, CoordinationOutcome, CoordinationReport, CoordinationStatus};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, LinearizedConstraints};
use crate::prosumer::ProsumerError;
use crate::qp::{QpError, QpSettings, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("agent {name} failed at iteration {iteration}: {source}")]
    Agent { name: String, iteration: usize, source: ProsumerError },
    #[error("grid constraints infeasible")]
    Infeasible,
    #[error("baseline not optimal: prosumer {prosumer} compensation {value}")]
    BaselineNotOptimal { prosumer: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid coordination config: {0}")]
    Config(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("centralized problem not solved to optimality: {0:?}")]
    CentralNotOptimal(QpStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rho0: f64,
    pub tau_incr: f64,
    pub tau_decr: f64,
    pub mu: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Iteration budget; reaching it ends the run with status `timeout`.
    pub max_iter: usize,
    /// Optional wall-clock budget in seconds.
    pub wall_clock_s: Option<f64>,
    pub adaptive_rho: bool,
    /// Re-linearization threshold in pu; infinity disables re-linearization.
    pub tol_lin: f64,
    /// Minimum number of iterations between two oracle evaluations.
    pub relin_every: usize,
    /// Divide every linearized row by its largest coefficient before
    /// coordination. Residuals and multipliers are expressed in the scaled
    /// units.
    pub equilibrate: bool,
    /// Factor applied to every row after equilibration. With demands in kW,
    /// 0.1 makes the largest coefficient of a row one per 10 kW, i.e. rows
    /// in per-unit power on a 10 kVA base.
    pub row_scale: f64,
    /// Additionally require both residual maxima below this value.
    pub residual_cap: Option<f64>,
    pub qp: QpSettings,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            tau_incr: 1.01,
            tau_decr: 1.01,
            mu: 10.0,
            eps_abs: 1e-5,
            eps_rel: 1e-4,
            max_iter: 500,
            wall_clock_s: None,
            adaptive_rho: true,
            tol_lin: 1e-3,
            relin_every: 5,
            equilibrate: true,
            row_scale: 0.1,
            residual_cap: None,
            qp: QpSettings::default(),
        }
    }
}

impl AdmmConfig {
    /// Applies the configured row scaling to a fresh linearization.
    pub fn scale_rows(&self, lin: &LinearizedConstraints) -> LinearizedConstraints {
        if self.equilibrate {
            lin.equilibrated(self.row_scale)
        } else {
            lin.scaled(self.row_scale)
        }
    }

    pub fn validate(&self) -> Result<(), CoordError> {
        let bad = |m: &str| Err(CoordError::Config(m.to_string()));
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return bad("rho0 must be positive");
        }
        if !(self.tau_incr >= 1.0 && self.tau_decr >= 1.0 && self.mu >= 1.0) {
            return bad("tau_incr, tau_decr and mu must be at least 1");
        }
        if !(self.eps_abs > 0.0 && self.eps_rel >= 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.row_scale > 0.0 && self.row_scale.is_finite()) {
            return bad("row_scale must be positive");
        }
        if !(self.tol_lin > 0.0) || self.relin_every == 0 {
            return bad("tol_lin must be positive and relin_every at least 1");
        }
        Ok(())
    }
}
