use serde::{Deserialize, Serialize};

use super::{AdmmConfig, CoordError};
use crate::grid::{LinearizedConstraints, ProsumerBlock};
use crate::prosumer::PriceSignal;

/// Residuals of one iteration, per prosumer, with their tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub eps_pri: Vec<f64>,
    pub eps_dual: Vec<f64>,
}

impl Residuals {
    pub fn max_r(&self) -> f64 {
        self.r.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_s(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }

    /// Tightest primal tolerance over prosumers.
    pub fn min_eps_pri(&self) -> f64 {
        self.eps_pri.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_eps_dual(&self) -> f64 {
        self.eps_dual.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Every prosumer within both tolerances.
    pub fn within_tolerance(&self) -> bool {
        self.r.iter().zip(&self.eps_pri).all(|(r, e)| r <= e) && self.s.iter().zip(&self.eps_dual).all(|(s, e)| s <= e)
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub rho: f64,
    pub max_r: f64,
    pub max_s: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    /// Last evaluated linearization error (NaN before the first evaluation).
    pub r_lin: f64,
    pub relinearized: bool,
}

/// Coordinator state. Stays inside the coordinator; agents only ever see
/// [`PriceSignal`]s.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub k: usize,
    pub xs: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub rho: f64,
    pub lin: LinearizedConstraints,
    pub(crate) blocks: Vec<ProsumerBlock>,
    /// Base tariff vector of every prosumer.
    pub(crate) tariffs: Vec<Vec<f64>>,
    pub history: Vec<IterationRecord>,
}

/// Step 0: `y = 0`, `z_i = A_i x_i⁰`, `ρ = ρ⁰`.
pub fn init_state(
    lin: LinearizedConstraints,
    x0: Vec<Vec<f64>>,
    tariffs: Vec<Vec<f64>>,
    rho0: f64,
) -> Result<AdmmState, CoordError> {
    let n = lin.prosumers();
    if x0.len() != n || tariffs.len() != n {
        return Err(CoordError::Dimension(format!(
            "{} demand vectors and {} tariffs for {n} prosumers",
            x0.len(),
            tariffs.len()
        )));
    }
    if let Some(bad) = x0.iter().chain(&tariffs).find(|v| v.len() != lin.cols() / n.max(1)) {
        return Err(CoordError::Dimension(format!("vector of length {} for horizon {}", bad.len(), lin.steps())));
    }
    if !(rho0 > 0.0) {
        return Err(CoordError::Dimension(format!("rho0 must be positive, got {rho0}")));
    }
    let blocks: Vec<ProsumerBlock> = (0..n).map(|i| lin.prosumer_block(i)).collect();
    let z = blocks.iter().zip(&x0).map(|(b, x)| b.mul(x)).collect();
    let m = lin.rows();
    Ok(AdmmState { k: 0, xs: x0, z, y: vec![vec![0.0; m]; n], rho: rho0, lin, blocks, tariffs, history: vec![] })
}

impl AdmmState {
    pub fn prosumers(&self) -> usize {
        self.xs.len()
    }

    /// `A_i x_i` for the current demands.
    pub fn contributions(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().zip(&self.xs).map(|(b, x)| b.mul(x)).collect()
    }

    /// Replaces the linearization, keeping `y` and `z`.
    pub fn set_linearization(&mut self, lin: LinearizedConstraints) {
        assert_eq!(lin.rows(), self.lin.rows(), "re-linearization must preserve the row layout");
        self.blocks = (0..lin.prosumers()).map(|i| lin.prosumer_block(i)).collect();
        self.lin = lin;
    }

    pub fn tariff(&self, i: usize) -> &[f64] {
        &self.tariffs[i]
    }
}

/// Step 2: minimizes `Σ_i y_iᵀ(w_i − z_i) + ρ/2‖w_i − z_i‖²` subject to
/// `Σ_i z_i <= b` (and `= b` on equality rows), with `w_i = A_i x_i`.
///
/// The problem separates by row: each row shifts `v_i = w_i + y_i/ρ` by the
/// same amount so that the sum meets `b`.
pub fn z_update(state: &AdmmState) -> Result<Vec<Vec<f64>>, CoordError> {
    let w = state.contributions();
    z_update_from(&state.lin, &w, &state.y, state.rho)
}

pub(crate) fn z_update_from(
    lin: &LinearizedConstraints,
    w: &[Vec<f64>],
    y: &[Vec<f64>],
    rho: f64,
) -> Result<Vec<Vec<f64>>, CoordError> {
    let b = lin.b();
    if b.iter().any(|v| !v.is_finite()) {
        return Err(CoordError::Infeasible);
    }
    let n = w.len();
    let mut z: Vec<Vec<f64>> = w
        .iter()
        .zip(y)
        .map(|(wi, yi)| wi.iter().zip(yi).map(|(a, l)| a + l / rho).collect())
        .collect();
    for (j, &bj) in b.iter().enumerate() {
        let sum: f64 = z.iter().map(|zi| zi[j]).sum();
        let excess = sum - bj;
        let shift = if lin.is_equality(j) { excess / n as f64 } else { excess.max(0.0) / n as f64 };
        if shift != 0.0 {
            for zi in z.iter_mut() {
                zi[j] -= shift;
            }
        }
    }
    Ok(z)
}

/// Step 3: `y_i ← y_i + ρ (A_i x_i − z_i)`.
pub fn dual_update(state: &mut AdmmState) {
    let w = state.contributions();
    for ((yi, wi), zi) in state.y.iter_mut().zip(&w).zip(&state.z) {
        for ((y, a), z) in yi.iter_mut().zip(wi).zip(zi) {
            *y += state.rho * (a - z);
        }
    }
}

/// Primal and dual residuals against the previous copy `z_prev`.
pub fn residuals(state: &AdmmState, z_prev: &[Vec<f64>], cfg: &AdmmConfig) -> Residuals {
    let m = state.lin.rows() as f64;
    let cols = state.xs.first().map_or(0, |x| x.len()) as f64;
    let w = state.contributions();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut out = Residuals { r: vec![], s: vec![], eps_pri: vec![], eps_dual: vec![] };
    for i in 0..state.prosumers() {
        let diff: Vec<f64> = w[i].iter().zip(&state.z[i]).map(|(a, b)| a - b).collect();
        let dz: Vec<f64> = state.z[i].iter().zip(&z_prev[i]).map(|(a, b)| a - b).collect();
        out.r.push(norm(&diff));
        out.s.push(state.rho * norm(&dz));
        out.eps_pri.push(m.sqrt() * cfg.eps_abs + cfg.eps_rel * norm(&w[i]).max(norm(&state.z[i])));
        out.eps_dual.push(cols.sqrt() * cfg.eps_abs + cfg.eps_rel * norm(&state.blocks[i].tmul(&state.y[i])));
    }
    out
}

/// Residual balancing on the max-over-prosumers residuals. Multipliers are
/// not rescaled.
pub fn adapt_rho(rho: f64, max_r: f64, max_s: f64, cfg: &AdmmConfig) -> f64 {
    if max_r > cfg.mu * max_s {
        rho * cfg.tau_incr
    } else if max_s > cfg.mu * max_r {
        rho / cfg.tau_decr
    } else {
        rho
    }
}

/// The quadratic tariff `C_i(x) = cᵀx + y_iᵀ(A_i x − z_i) + ρ/2‖A_i x − z_i‖²`
/// regrouped as `f + gᵀx + ½xᵀHx`.
pub fn extract_price_signal(state: &AdmmState, i: usize) -> PriceSignal {
    signal_from(&state.blocks[i], &state.tariffs[i], &state.y[i], &state.z[i], state.rho, state.k)
}

/// The signal of prosumer `i` with the penalty replaced by `rho`, holding
/// `A_i`, `y_i` and `z_i`.
pub fn price_signal_with_rho(state: &AdmmState, i: usize, rho: f64) -> PriceSignal {
    signal_from(&state.blocks[i], &state.tariffs[i], &state.y[i], &state.z[i], rho, state.k)
}

pub(crate) fn signal_from(
    block: &ProsumerBlock,
    c: &[f64],
    y: &[f64],
    z: &[f64],
    rho: f64,
    round: usize,
) -> PriceSignal {
    let h = block.gram().into_iter().map(|g| g.map(|v| rho * v)).collect();
    let shifted: Vec<f64> = y.iter().zip(z).map(|(l, zz)| l - rho * zz).collect();
    let g = c.iter().zip(block.tmul(&shifted)).map(|(a, b)| a + b).collect();
    let zz: f64 = z.iter().map(|v| v * v).sum();
    let yz: f64 = y.iter().zip(z).map(|(a, b)| a * b).sum();
    PriceSignal { h, g, f: 0.5 * rho * zz - yz, round }
}

/// `cᵀ(x* − x̂)` per prosumer; each must be non-negative up to `1e-6` CHF.
pub fn compute_compensation(
    tariffs: &[Vec<f64>],
    x_star: &[Vec<f64>],
    x_hat: &[Vec<f64>],
) -> Result<Vec<f64>, CoordError> {
    tariffs
        .iter()
        .zip(x_star.iter().zip(x_hat))
        .enumerate()
        .map(|(i, (c, (xs, xh)))| {
            let comp: f64 = c.iter().zip(xs.iter().zip(xh)).map(|(c, (a, b))| c * (a - b)).sum();
            if comp < -1e-6 {
                Err(CoordError::BaselineNotOptimal { prosumer: i, value: comp })
            } else {
                Ok(comp)
            }
        })
        .collect()
}
