use serde::{Deserialize, Serialize};

use super::{PriceSignal, ProsumerError};
use crate::qp::{solve_qp, QpSettings, QuadraticProgram, SparseMatrix};

/// Weight of the tie-breaking term `‖(p_b, q_b)‖²`.
pub const REGULARIZATION: f64 = 1e-3;
/// Weight of the tie-breaking term `‖p_pv_max − p_pv‖²`.
pub const CURTAILMENT_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BessSpec {
    /// Rated apparent power, kVA.
    pub s_max_kva: f64,
    /// Energy capacity, kWh.
    pub capacity_kwh: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_init: f64,
}

impl BessSpec {
    pub fn validate(&self) -> Result<(), ProsumerError> {
        let ok = self.s_max_kva > 0.0
            && self.capacity_kwh > 0.0
            && 0.0 <= self.soc_min
            && self.soc_min < self.soc_max
            && self.soc_max <= 1.0;
        if !ok {
            return Err(ProsumerError::InvalidSpec(format!("{self:?}")));
        }
        if !self.soc_in_bounds(self.soc_init) {
            return Err(ProsumerError::StateOutOfBounds(self.soc_init));
        }
        Ok(())
    }

    /// Per-axis limit of the inner box `|p|, |q| <= s_max / √2`.
    pub fn box_limit(&self) -> f64 {
        self.s_max_kva / std::f64::consts::SQRT_2
    }

    /// SoC change for discharging `p_kw` (positive = discharge) over `dt_h`.
    pub fn soc_delta(&self, p_kw: f64, dt_h: f64) -> f64 {
        -p_kw * dt_h / self.capacity_kwh
    }

    pub fn soc_in_bounds(&self, soc: f64) -> bool {
        soc >= self.soc_min - 1e-9 && soc <= self.soc_max + 1e-9
    }
}

/// PV generation potential per step, kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvSpec {
    pub p_max: Vec<f64>,
}

/// One behind-the-meter resource. Demand is load-positive: the BESS
/// discharges for `p_b > 0` and reduces the prosumer's demand.
#[derive(Debug, Clone, PartialEq)]
pub enum Resource {
    InflexibleLoad { p: Vec<f64>, q: Vec<f64> },
    Bess(BessSpec),
    CurtailablePv(PvSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BessTrajectory {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// SoC at the end of each step.
    pub soc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSchedule {
    pub bess: Vec<BessTrajectory>,
    pub pv: Vec<Vec<f64>>,
}

impl ResourceSchedule {
    pub fn total_bess_p(&self, t: usize) -> f64 {
        self.bess.iter().map(|b| b.p[t]).sum()
    }

    pub fn total_bess_q(&self, t: usize) -> f64 {
        self.bess.iter().map(|b| b.q[t]).sum()
    }

    pub fn total_pv(&self, t: usize) -> f64 {
        self.pv.iter().map(|p| p[t]).sum()
    }
}

/// Result of one prosumer optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerResponse {
    /// Interleaved `[p_1, q_1, p_2, q_2, ...]` demand in kW / kvar.
    pub x: Vec<f64>,
    pub resources: ResourceSchedule,
    /// Value of the signal at `x` (without the tie-breaking term).
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
struct BessVars {
    spec: BessSpec,
    offset: usize,
}

#[derive(Debug, Clone)]
struct PvVars {
    p_max: Vec<f64>,
    offset: usize,
}

/// Constraint skeleton of a prosumer's scheduling problem.
///
/// Variables are `x` (2K), then per BESS `p_b`, `q_b`, `soc` (K each), then
/// per PV `p_pv` (K).
#[derive(Debug, Clone)]
pub struct ProsumerProblem {
    steps: usize,
    dt_h: f64,
    load_p: Vec<f64>,
    load_q: Vec<f64>,
    bess: Vec<BessVars>,
    pv: Vec<PvVars>,
    base: QuadraticProgram,
}

impl ProsumerProblem {
    pub fn new(resources: &[Resource], steps: usize, dt_h: f64) -> Result<Self, ProsumerError> {
        if !(dt_h > 0.0) {
            return Err(ProsumerError::InvalidSpec(format!("step length {dt_h} h")));
        }
        let k = steps;
        let check_len = |what: &str, len: usize| {
            if len == k {
                Ok(())
            } else {
                Err(ProsumerError::Dimension(format!("{what} has {len} steps, horizon has {k}")))
            }
        };
        let mut load_p = vec![0.0; k];
        let mut load_q = vec![0.0; k];
        let mut bess = Vec::new();
        let mut pv = Vec::new();
        let mut n = 2 * k;
        for r in resources {
            match r {
                Resource::InflexibleLoad { p, q } => {
                    check_len("load p", p.len())?;
                    check_len("load q", q.len())?;
                    for t in 0..k {
                        load_p[t] += p[t];
                        load_q[t] += q[t];
                    }
                }
                Resource::Bess(spec) => {
                    spec.validate()?;
                    bess.push(BessVars { spec: *spec, offset: n });
                    n += 3 * k;
                }
                Resource::CurtailablePv(spec) => {
                    check_len("pv potential", spec.p_max.len())?;
                    if spec.p_max.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return Err(ProsumerError::InvalidSpec("negative or non-finite pv potential".into()));
                    }
                    pv.push(PvVars { p_max: spec.p_max.clone(), offset: n });
                    n += k;
                }
            }
        }
        if load_p.iter().chain(&load_q).any(|v| !v.is_finite()) {
            return Err(ProsumerError::InvalidSpec("non-finite load".into()));
        }

        let mut qp = QuadraticProgram::new(n);
        let mut eq = Vec::new();
        let mut b_eq = Vec::new();
        let mut p_diag = Vec::new();
        for t in 0..k {
            // x_p + Σ p_b + Σ p_pv = load_p
            eq.push((b_eq.len(), 2 * t, 1.0));
            for bv in &bess {
                eq.push((b_eq.len(), bv.offset + t, 1.0));
            }
            for pvv in &pv {
                eq.push((b_eq.len(), pvv.offset + t, 1.0));
            }
            b_eq.push(load_p[t]);
            // x_q + Σ q_b = load_q
            eq.push((b_eq.len(), 2 * t + 1, 1.0));
            for bv in &bess {
                eq.push((b_eq.len(), bv.offset + k + t, 1.0));
            }
            b_eq.push(load_q[t]);
        }
        for bv in &bess {
            let s = &bv.spec;
            let (p0, q0, soc0) = (bv.offset, bv.offset + k, bv.offset + 2 * k);
            let lim = s.box_limit();
            for t in 0..k {
                // soc_t - soc_{t-1} + Δt/E p_t = 0
                let row = b_eq.len();
                eq.push((row, soc0 + t, 1.0));
                eq.push((row, p0 + t, dt_h / s.capacity_kwh));
                if t == 0 {
                    b_eq.push(s.soc_init);
                } else {
                    eq.push((row, soc0 + t - 1, -1.0));
                    b_eq.push(0.0);
                }
                for j in [p0 + t, q0 + t] {
                    qp.lower[j] = -lim;
                    qp.upper[j] = lim;
                    p_diag.push((j, j, 2.0 * REGULARIZATION));
                }
                qp.lower[soc0 + t] = s.soc_min;
                qp.upper[soc0 + t] = s.soc_max;
            }
        }
        for pvv in &pv {
            for t in 0..k {
                let j = pvv.offset + t;
                qp.lower[j] = 0.0;
                qp.upper[j] = pvv.p_max[t];
                p_diag.push((j, j, 2.0 * CURTAILMENT_REGULARIZATION));
                qp.q[j] = -2.0 * CURTAILMENT_REGULARIZATION * pvv.p_max[t];
            }
        }
        qp.p = SparseMatrix::from_triplets(n, n, p_diag);
        qp.a_eq = SparseMatrix::from_triplets(b_eq.len(), n, eq);
        qp.b_eq = b_eq;
        Ok(Self { steps: k, dt_h, load_p, load_q, bess, pv, base: qp })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt_h(&self) -> f64 {
        self.dt_h
    }

    pub fn load_p(&self) -> &[f64] {
        &self.load_p
    }

    pub fn load_q(&self) -> &[f64] {
        &self.load_q
    }

    pub fn bess_specs(&self) -> impl Iterator<Item = &BessSpec> {
        self.bess.iter().map(|b| &b.spec)
    }

    pub fn pv_potential(&self) -> impl Iterator<Item = &[f64]> {
        self.pv.iter().map(|p| p.p_max.as_slice())
    }

    /// Full QP for minimizing `signal` plus the tie-breaking term.
    pub fn qp(&self, signal: &PriceSignal) -> Result<QuadraticProgram, ProsumerError> {
        if signal.g.len() != 2 * self.steps || signal.h.len() != self.steps {
            return Err(ProsumerError::Dimension(format!(
                "signal covers {} steps, problem has {}",
                signal.h.len(),
                self.steps
            )));
        }
        let mut qp = self.base.clone();
        let mut trip: Vec<_> = qp.p.iter().collect();
        for (t, h) in signal.h.iter().enumerate() {
            for (k, &v) in h.iter().enumerate() {
                trip.push((2 * t + k / 2, 2 * t + k % 2, v));
            }
        }
        qp.p = SparseMatrix::from_triplets(qp.n(), qp.n(), trip);
        qp.q[..2 * self.steps].copy_from_slice(&signal.g);
        Ok(qp)
    }

    /// Minimizes the advertised signal over the prosumer's feasible set.
    pub fn respond(&self, signal: &PriceSignal, settings: &QpSettings) -> Result<ProsumerResponse, ProsumerError> {
        let qp = self.qp(signal)?;
        let sol = solve_qp(&qp, settings)?;
        if !sol.is_optimal() {
            return Err(ProsumerError::NotOptimal(sol.status));
        }
        let resources = self.extract(&sol.u);
        let x = self.aggregate(&resources);
        Ok(ProsumerResponse { objective: signal.evaluate(&x), x, resources })
    }

    /// Recovers resource trajectories from a solver vector, clipping round-off
    /// at the bounds and recomputing SoC by the recursion.
    fn extract(&self, u: &[f64]) -> ResourceSchedule {
        let k = self.steps;
        let bess = self
            .bess
            .iter()
            .map(|bv| {
                let lim = bv.spec.box_limit();
                let clip = |v: f64| v.clamp(-lim, lim);
                let p: Vec<f64> = u[bv.offset..bv.offset + k].iter().map(|&v| clip(v)).collect();
                let q: Vec<f64> = u[bv.offset + k..bv.offset + 2 * k].iter().map(|&v| clip(v)).collect();
                let soc = soc_trajectory(&bv.spec, &p, self.dt_h);
                BessTrajectory { p, q, soc }
            })
            .collect();
        let pv = self
            .pv
            .iter()
            .map(|pvv| (0..k).map(|t| u[pvv.offset + t].clamp(0.0, pvv.p_max[t])).collect())
            .collect();
        ResourceSchedule { bess, pv }
    }

    /// Demand implied by a resource schedule: `load − pv − bess`.
    pub fn aggregate(&self, r: &ResourceSchedule) -> Vec<f64> {
        (0..self.steps)
            .flat_map(|t| {
                [
                    self.load_p[t] - r.total_pv(t) - r.total_bess_p(t),
                    self.load_q[t] - r.total_bess_q(t),
                ]
            })
            .collect()
    }

    /// Value of the tie-breaking term for a schedule.
    pub fn regularization(&self, r: &ResourceSchedule) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let bess: f64 = r.bess.iter().map(|b| sq(&b.p) + sq(&b.q)).sum();
        let pv: f64 = r
            .pv
            .iter()
            .zip(&self.pv)
            .map(|(p, pvv)| p.iter().zip(&pvv.p_max).map(|(v, m)| (m - v) * (m - v)).sum::<f64>())
            .sum();
        REGULARIZATION * bess + CURTAILMENT_REGULARIZATION * pv
    }

    /// Checks every schedule invariant; returns the first violation found.
    pub fn check_schedule(&self, x: &[f64], r: &ResourceSchedule, tol: f64) -> Result<(), String> {
        let k = self.steps;
        if x.len() != 2 * k {
            return Err(format!("demand length {} != {}", x.len(), 2 * k));
        }
        let agg = self.aggregate(r);
        for (j, (a, b)) in x.iter().zip(&agg).enumerate() {
            if (a - b).abs() > tol {
                return Err(format!("aggregation mismatch at entry {j}: {a} vs {b}"));
            }
        }
        for (bv, traj) in self.bess.iter().zip(&r.bess) {
            let s = &bv.spec;
            let lim = s.box_limit();
            let mut soc = s.soc_init;
            for t in 0..k {
                if traj.p[t].abs() > lim + tol || traj.q[t].abs() > lim + tol {
                    return Err(format!("bess box violated at step {t}"));
                }
                soc += s.soc_delta(traj.p[t], self.dt_h);
                if (soc - traj.soc[t]).abs() > tol {
                    return Err(format!("soc recursion broken at step {t}"));
                }
                if traj.soc[t] < s.soc_min - tol || traj.soc[t] > s.soc_max + tol {
                    return Err(format!("soc {} out of bounds at step {t}", traj.soc[t]));
                }
            }
        }
        for (pvv, p) in self.pv.iter().zip(&r.pv) {
            for t in 0..k {
                if p[t] < -tol || p[t] > pvv.p_max[t] + tol {
                    return Err(format!("pv output {} outside [0, {}] at step {t}", p[t], pvv.p_max[t]));
                }
            }
        }
        Ok(())
    }
}

/// SoC after each step for discharge powers `p` (kW).
pub fn soc_trajectory(spec: &BessSpec, p: &[f64], dt_h: f64) -> Vec<f64> {
    let mut soc = spec.soc_init;
    p.iter()
        .map(|&pt| {
            soc += spec.soc_delta(pt, dt_h);
            soc
        })
        .collect()
}

/// Prosumer asset description as stored in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsumerSpec {
    pub name: String,
    pub bus: String,
    #[serde(default)]
    pub bess: Option<BessSpec>,
    /// Rated PV power, kW; scales normalized irradiance profiles.
    #[serde(default)]
    pub pv_rated_kw: f64,
    /// Peak of the inflexible load, kW.
    #[serde(default)]
    pub load_peak_kw: f64,
    /// Constant power factor of the load; `None` means `q = 0`.
    #[serde(default)]
    pub power_factor: Option<f64>,
}

impl ProsumerSpec {
    /// Reactive load implied by the power factor.
    pub fn load_q(&self, load_p: &[f64]) -> Vec<f64> {
        match self.power_factor {
            Some(pf) if pf > 0.0 && pf < 1.0 => {
                let ratio = (1.0 - pf * pf).sqrt() / pf;
                load_p.iter().map(|p| p * ratio).collect()
            }
            _ => vec![0.0; load_p.len()],
        }
    }

    pub fn resources(&self, load_p: &[f64], pv_p_max: &[f64], soc_init: Option<f64>) -> Vec<Resource> {
        let mut out = vec![Resource::InflexibleLoad { p: load_p.to_vec(), q: self.load_q(load_p) }];
        if let Some(mut b) = self.bess {
            if let Some(soc) = soc_init {
                b.soc_init = soc;
            }
            out.push(Resource::Bess(b));
        }
        if self.pv_rated_kw > 0.0 {
            out.push(Resource::CurtailablePv(PvSpec { p_max: pv_p_max.to_vec() }));
        }
        out
    }
}

/// Builds the constraint skeleton for a prosumer from forecasts.
pub fn build_prosumer_problem(
    spec: &ProsumerSpec,
    load_p: &[f64],
    pv_p_max: &[f64],
    soc_init: Option<f64>,
    dt_h: f64,
) -> Result<ProsumerProblem, ProsumerError> {
    if load_p.len() != pv_p_max.len() {
        return Err(ProsumerError::Dimension(format!(
            "load has {} steps, pv has {}",
            load_p.len(),
            pv_p_max.len()
        )));
    }
    ProsumerProblem::new(&spec.resources(load_p, pv_p_max, soc_init), load_p.len(), dt_h)
}

/// Step 1 of the coordination loop: the prosumer's best response to `signal`.
pub fn x_update(
    problem: &ProsumerProblem,
    signal: &PriceSignal,
    settings: &QpSettings,
) -> Result<ProsumerResponse, ProsumerError> {
    problem.respond(signal, settings)
}

/// The uncoordinated baseline `min cᵀx` over the prosumer's constraints.
pub fn local_cost_min(
    problem: &ProsumerProblem,
    c: &[f64],
    settings: &QpSettings,
) -> Result<ProsumerResponse, ProsumerError> {
    problem.respond(&PriceSignal::tariff(c), settings)
}
