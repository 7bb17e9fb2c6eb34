use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{build_admittance, GridError, NetworkModel};

/// Nodal demand of every non-slack bus for one timestep, in pu.
///
/// Positive values are consumption. Entries follow [`NetworkModel::non_slack`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Self { p: vec![0.0; n], q: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|v| v.is_finite())
    }
}

/// Linearization point over a horizon: one [`Injections`] per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub steps: Vec<Injections>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus (all buses, declaration order), pu.
    pub v: Vec<f64>,
    /// Voltage angle per bus, rad.
    pub theta: Vec<f64>,
    /// Active power delivered by the upper grid through the slack bus, pu.
    pub p_slack: f64,
    /// Reactive power delivered through the slack bus, pu.
    pub q_slack: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest complex power mismatch over non-slack buses, pu.
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iter: 50 }
    }
}

/// Newton-Raphson solver with the admittance matrix cached for repeated solves.
#[derive(Debug, Clone)]
pub struct PowerFlow {
    pub(crate) y: DMatrix<Complex64>,
    pub(crate) slack: usize,
    pub(crate) pq: Vec<usize>,
    pub options: PowerFlowOptions,
}

impl PowerFlow {
    pub fn new(model: &NetworkModel) -> Result<Self, GridError> {
        model.validate()?;
        Ok(Self {
            y: build_admittance(model)?,
            slack: model.slack_index(),
            pq: model.non_slack(),
            options: PowerFlowOptions::default(),
        })
    }

    pub fn n_buses(&self) -> usize {
        self.y.nrows()
    }

    /// Solves from a flat start. Non-convergence is reported through
    /// `converged = false`, never as a fabricated solution.
    pub fn solve(&self, inj: &Injections, slack_voltage: f64) -> Result<PowerFlowSolution, GridError> {
        let npq = self.pq.len();
        if inj.p.len() != npq || inj.q.len() != npq {
            return Err(GridError::Dimension(format!(
                "expected {npq} non-slack injections, got {}/{}",
                inj.p.len(),
                inj.q.len()
            )));
        }
        if !inj.is_finite() || !slack_voltage.is_finite() {
            return Err(GridError::Dimension("injections must be finite".into()));
        }
        let n = self.n_buses();
        let mut vm = vec![slack_voltage; n];
        let mut va = vec![0.0; n];
        let mut iterations = 0;
        let mut mismatch = self.mismatch(&vm, &va, inj);
        let mut max_mis = max_abs(&mismatch);
        while max_mis > self.options.tolerance && iterations < self.options.max_iter {
            iterations += 1;
            let v = polar(&vm, &va);
            let (ds_dva, ds_dvm) = ds_dv(&self.y, &v);
            let mut jac = DMatrix::<f64>::zeros(2 * npq, 2 * npq);
            for (r, &i) in self.pq.iter().enumerate() {
                for (c, &j) in self.pq.iter().enumerate() {
                    jac[(r, c)] = ds_dva[(i, j)].re;
                    jac[(r, c + npq)] = ds_dvm[(i, j)].re;
                    jac[(r + npq, c)] = ds_dva[(i, j)].im;
                    jac[(r + npq, c + npq)] = ds_dvm[(i, j)].im;
                }
            }
            let rhs = DVector::from_vec(mismatch.iter().map(|m| -m).collect());
            let Some(dx) = jac.lu().solve(&rhs) else {
                break;
            };
            for (r, &i) in self.pq.iter().enumerate() {
                va[i] += dx[r];
                vm[i] += dx[r + npq];
            }
            mismatch = self.mismatch(&vm, &va, inj);
            max_mis = max_abs(&mismatch);
            if !max_mis.is_finite() {
                break;
            }
        }
        let v = polar(&vm, &va);
        let s_slack = bus_power(&self.y, &v, self.slack);
        let converged = max_mis.is_finite() && max_mis <= self.options.tolerance;
        Ok(PowerFlowSolution {
            v: vm,
            theta: va,
            p_slack: s_slack.re,
            q_slack: s_slack.im,
            converged,
            iterations,
            max_mismatch: max_mis,
        })
    }

    /// Stacked [ΔP; ΔQ] over non-slack buses: computed minus specified injection.
    fn mismatch(&self, vm: &[f64], va: &[f64], inj: &Injections) -> Vec<f64> {
        let v = polar(vm, va);
        let npq = self.pq.len();
        let mut out = vec![0.0; 2 * npq];
        for (r, &i) in self.pq.iter().enumerate() {
            let s = bus_power(&self.y, &v, i);
            out[r] = s.re + inj.p[r];
            out[r + npq] = s.im + inj.q[r];
        }
        out
    }
}

/// Convenience wrapper around [`PowerFlow`] for a single solve.
pub fn solve_power_flow(
    model: &NetworkModel,
    inj: &Injections,
    slack_voltage: f64,
) -> Result<PowerFlowSolution, GridError> {
    PowerFlow::new(model)?.solve(inj, slack_voltage)
}

pub(crate) fn polar(vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
}

/// Complex power injected into the network at bus `i`.
pub(crate) fn bus_power(y: &DMatrix<Complex64>, v: &[Complex64], i: usize) -> Complex64 {
    let current: Complex64 = (0..v.len()).map(|j| y[(i, j)] * v[j]).sum();
    v[i] * current.conj()
}

/// Partial derivatives of the complex bus injections with respect to voltage
/// angles and magnitudes (all buses).
pub(crate) fn ds_dv(
    y: &DMatrix<Complex64>,
    v: &[Complex64],
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = v.len();
    let ibus: Vec<Complex64> = (0..n).map(|i| (0..n).map(|j| y[(i, j)] * v[j]).sum()).collect();
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    let j = Complex64::new(0.0, 1.0);
    let mut ds_dva = DMatrix::<Complex64>::zeros(n, n);
    let mut ds_dvm = DMatrix::<Complex64>::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let diag_i = if r == c { ibus[r] } else { Complex64::new(0.0, 0.0) };
            ds_dva[(r, c)] = j * v[r] * (diag_i - y[(r, c)] * v[c]).conj();
            let mut dm = v[r] * (y[(r, c)] * vnorm[c]).conj();
            if r == c {
                dm += ibus[r].conj() * vnorm[r];
            }
            ds_dvm[(r, c)] = dm;
        }
    }
    (ds_dva, ds_dvm)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}
