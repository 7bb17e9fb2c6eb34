use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::admm::{
    adapt_rho, compute_compensation, dual_update, extract_price_signal, init_state, price_signal_with_rho, residuals,
    z_update, AdmmState, IterationRecord,
};
use super::{AdmmConfig, CoordError};
use crate::grid::{DsoGrid, GridError};
use crate::prosumer::{local_cost_min, x_update, PriceSignal, ProsumerProblem, ProsumerResponse};
use crate::qp::dot;

/// A prosumer as seen by the coordinator: its local problem and base tariff.
#[derive(Debug, Clone)]
pub struct Agent {
    pub name: String,
    pub problem: ProsumerProblem,
    /// Base tariff over the interleaved demand layout, CHF per kW per step.
    pub tariff: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinationStatus {
    Converged,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationReport {
    pub status: CoordinationStatus,
    pub iterations: usize,
    pub max_r: f64,
    pub max_s: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub rho: f64,
    pub names: Vec<String>,
    pub signals: Vec<PriceSignal>,
    /// Tariff cost of the uncoordinated baseline, CHF.
    pub cost_without: Vec<f64>,
    /// Tariff cost of the coordinated schedule, CHF.
    pub cost_with: Vec<f64>,
    pub compensation: Vec<f64>,
    pub total_without: f64,
    pub total_with: f64,
    pub total_compensation: f64,
    pub relinearizations: usize,
    pub final_lin_error: Option<f64>,
    /// Largest violation of the final linearized constraints by `x*`.
    pub max_violation: f64,
    /// Non-fatal events, e.g. a failed oracle evaluation.
    pub events: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CoordinationOutcome {
    pub report: CoordinationReport,
    /// Responses `x*` to the final price signals.
    pub responses: Vec<ProsumerResponse>,
    /// Uncoordinated baseline `x̂`.
    pub baseline: Vec<ProsumerResponse>,
    pub state: AdmmState,
}

pub(crate) fn respond_all(
    agents: &[Agent],
    signals: &[PriceSignal],
    cfg: &AdmmConfig,
    iteration: usize,
) -> Result<Vec<ProsumerResponse>, CoordError> {
    agents
        .par_iter()
        .zip(signals.par_iter())
        .map(|(a, s)| {
            x_update(&a.problem, s, &cfg.qp).map_err(|source| CoordError::Agent {
                name: a.name.clone(),
                iteration,
                source,
            })
        })
        .collect()
}

/// Uncoordinated tariff-only schedules of every agent.
pub fn baseline(agents: &[Agent], cfg: &AdmmConfig) -> Result<Vec<ProsumerResponse>, CoordError> {
    agents
        .par_iter()
        .map(|a| {
            local_cost_min(&a.problem, &a.tariff, &cfg.qp).map_err(|source| CoordError::Agent {
                name: a.name.clone(),
                iteration: 0,
                source,
            })
        })
        .collect()
}

/// Responses to the final signals of `state` re-issued with penalty `rho`.
pub fn responses_at_rho(
    agents: &[Agent],
    state: &AdmmState,
    rho: f64,
    cfg: &AdmmConfig,
) -> Result<Vec<ProsumerResponse>, CoordError> {
    let signals: Vec<PriceSignal> = (0..agents.len()).map(|i| price_signal_with_rho(state, i, rho)).collect();
    respond_all(agents, &signals, cfg, state.k + 1)
}

/// Runs the coordination loop from the uncoordinated baseline.
pub fn run_coordination(agents: &[Agent], grid: &DsoGrid, cfg: &AdmmConfig) -> Result<CoordinationOutcome, CoordError> {
    let base = baseline(agents, cfg)?;
    let x0: Vec<Vec<f64>> = base.iter().map(|r| r.x.clone()).collect();
    let lin = cfg.scale_rows(&grid.linearize(&x0)?);
    let state = init_state(lin, x0, agents.iter().map(|a| a.tariff.clone()).collect(), cfg.rho0)?;
    iterate(agents, grid, cfg, state, base)
}

/// Runs the loop from a given state, e.g. one warm-started from a previous
/// coordination.
pub fn iterate(
    agents: &[Agent],
    grid: &DsoGrid,
    cfg: &AdmmConfig,
    mut state: AdmmState,
    base: Vec<ProsumerResponse>,
) -> Result<CoordinationOutcome, CoordError> {
    cfg.validate()?;
    let start = Instant::now();
    let n = agents.len();
    let mut events = Vec::new();
    let mut relinearizations = 0;
    let mut last_check = 0usize;
    let mut r_lin = f64::NAN;
    let mut status = CoordinationStatus::Timeout;
    let mut last_res = None;

    // Evaluates the linearization error and re-linearizes if needed; returns
    // whether the constraints changed.
    let mut check_linearization = |state: &mut AdmmState, r_lin: &mut f64, events: &mut Vec<String>| -> Result<bool, CoordError> {
        match grid.linearization_error(&state.lin, &state.xs) {
            Ok(err) => {
                *r_lin = err;
                if err > cfg.tol_lin {
                    match grid.linearize(&state.xs).map(|l| l.with_row_scales(state.lin.row_scales())) {
                        Ok(lin) => {
                            state.set_linearization(lin);
                            relinearizations += 1;
                            return Ok(true);
                        }
                        Err(GridError::InfeasibleLinearization) => {
                            events.push(format!("iteration {}: re-linearization point infeasible", state.k));
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                Ok(false)
            }
            Err(GridError::OracleFailed) => {
                events.push(format!("iteration {}: cannot evaluate g, keeping linearization", state.k));
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    };

    while state.k < cfg.max_iter {
        state.k += 1;
        let k = state.k;
        let signals: Vec<PriceSignal> = (0..n).map(|i| extract_price_signal(&state, i)).collect();
        let responses = respond_all(agents, &signals, cfg, k)?;
        state.xs = responses.into_iter().map(|r| r.x).collect();
        let z_prev = state.z.clone();
        state.z = z_update(&state)?;
        dual_update(&mut state);
        let res = residuals(&state, &z_prev, cfg);

        let mut relinearized = false;
        let mut checked = false;
        if cfg.tol_lin.is_finite() && k - last_check >= cfg.relin_every {
            last_check = k;
            checked = true;
            relinearized = check_linearization(&mut state, &mut r_lin, &mut events)?;
        }
        let mut done = res.within_tolerance() && cfg.residual_cap.map_or(true, |cap| res.max_r() <= cap && res.max_s() <= cap);
        if done && !checked && !relinearized && cfg.tol_lin.is_finite() {
            last_check = k;
            relinearized = check_linearization(&mut state, &mut r_lin, &mut events)?;
        }
        if relinearized {
            done = false;
        }
        state.history.push(IterationRecord {
            k,
            rho: state.rho,
            max_r: res.max_r(),
            max_s: res.max_s(),
            eps_pri: res.min_eps_pri(),
            eps_dual: res.min_eps_dual(),
            r_lin,
            relinearized,
        });
        last_res = Some(res.clone());
        if done {
            status = CoordinationStatus::Converged;
            break;
        }
        if cfg.adaptive_rho {
            state.rho = adapt_rho(state.rho, res.max_r(), res.max_s(), cfg);
        }
        if cfg.wall_clock_s.is_some_and(|budget| start.elapsed().as_secs_f64() > budget) {
            events.push(format!("iteration {k}: wall-clock budget exhausted"));
            break;
        }
    }

    let signals: Vec<PriceSignal> = (0..n).map(|i| extract_price_signal(&state, i)).collect();
    let responses = respond_all(agents, &signals, cfg, state.k + 1)?;
    let x_star: Vec<Vec<f64>> = responses.iter().map(|r| r.x.clone()).collect();
    let x_hat: Vec<Vec<f64>> = base.iter().map(|r| r.x.clone()).collect();
    let tariffs: Vec<Vec<f64>> = agents.iter().map(|a| a.tariff.clone()).collect();
    let compensation = compute_compensation(&tariffs, &x_star, &x_hat)?;
    let cost_without: Vec<f64> = tariffs.iter().zip(&x_hat).map(|(c, x)| dot(c, x)).collect();
    let cost_with: Vec<f64> = tariffs.iter().zip(&x_star).map(|(c, x)| dot(c, x)).collect();
    let final_lin_error = match grid.linearization_error(&state.lin, &x_star) {
        Ok(e) => Some(e),
        Err(GridError::OracleFailed) => None,
        Err(e) => return Err(e.into()),
    };
    let res = last_res.unwrap_or_else(|| residuals(&state, &state.z.clone(), cfg));
    let report = CoordinationReport {
        status,
        iterations: state.k,
        max_r: res.max_r(),
        max_s: res.max_s(),
        eps_pri: res.min_eps_pri(),
        eps_dual: res.min_eps_dual(),
        rho: state.rho,
        names: agents.iter().map(|a| a.name.clone()).collect(),
        signals,
        total_without: cost_without.iter().sum(),
        total_with: cost_with.iter().sum(),
        total_compensation: compensation.iter().sum(),
        cost_without,
        cost_with,
        compensation,
        relinearizations,
        final_lin_error,
        max_violation: state.lin.max_violation(&x_star),
        events,
    };
    Ok(CoordinationOutcome { report, responses, baseline: base, state })
}
