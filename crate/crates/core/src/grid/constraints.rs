use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{GridError, Injections, NetworkModel, OperatingPoint, PowerFlow, PowerFlowSolution};

/// Operating limits enforced by the DSO, in pu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub q_slack_max: f64,
    pub s_slack_max: f64,
}

impl GridLimits {
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.v_min < self.v_max) {
            return Err(GridError::InvalidLimits(format!(
                "v_min {} must be below v_max {}",
                self.v_min, self.v_max
            )));
        }
        if !(self.q_slack_max < self.s_slack_max) || self.q_slack_max < 0.0 {
            return Err(GridError::InvalidLimits(format!(
                "q_slack_max {} must lie in [0, s_slack_max {})",
                self.q_slack_max, self.s_slack_max
            )));
        }
        Ok(())
    }

    /// Active power limit left at the slack bus once the reactive band is reserved.
    pub fn p_slack_max(&self) -> f64 {
        (self.s_slack_max.powi(2) - self.q_slack_max.powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    Equality,
    VoltageMin,
    VoltageMax,
    SlackQUpper,
    SlackQLower,
    SlackPUpper,
    SlackPLower,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub kind: ConstraintKind,
    pub bus: Option<String>,
    pub step: usize,
}

/// One prosumer's column slice `A_i` of the DSO constraints.
///
/// Rows of step `t` only depend on the demand at step `t`, so the slice is
/// stored as a `rows_per_step x 2` block per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerBlock {
    steps: usize,
    rows_per_step: usize,
    coef: Vec<f64>,
}

impl ProsumerBlock {
    pub fn rows(&self) -> usize {
        self.steps * self.rows_per_step
    }

    pub fn cols(&self) -> usize {
        2 * self.steps
    }

    #[inline]
    fn at(&self, t: usize, row: usize, comp: usize) -> f64 {
        self.coef[(t * self.rows_per_step + row) * 2 + comp]
    }

    /// `A_i x_i`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        let mut out = vec![0.0; self.rows()];
        for t in 0..self.steps {
            let (p, q) = (x[2 * t], x[2 * t + 1]);
            for r in 0..self.rows_per_step {
                out[t * self.rows_per_step + r] = self.at(t, r, 0) * p + self.at(t, r, 1) * q;
            }
        }
        out
    }

    /// `A_iᵀ y`.
    pub fn tmul(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows());
        let mut out = vec![0.0; self.cols()];
        for t in 0..self.steps {
            for r in 0..self.rows_per_step {
                let v = y[t * self.rows_per_step + r];
                out[2 * t] += self.at(t, r, 0) * v;
                out[2 * t + 1] += self.at(t, r, 1) * v;
            }
        }
        out
    }

    /// Per-step 2x2 blocks of `A_iᵀ A_i`, row-major.
    pub fn gram(&self) -> Vec<[f64; 4]> {
        (0..self.steps)
            .map(|t| {
                let mut g = [0.0; 4];
                for r in 0..self.rows_per_step {
                    let (a, b) = (self.at(t, r, 0), self.at(t, r, 1));
                    g[0] += a * a;
                    g[1] += a * b;
                    g[3] += b * b;
                }
                g[2] = g[1];
                g
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols());
        for t in 0..self.steps {
            for r in 0..self.rows_per_step {
                for c in 0..2 {
                    m[(t * self.rows_per_step + r, 2 * t + c)] = self.at(t, r, c);
                }
            }
        }
        m
    }
}

/// The DSO constraints `A x <= b` (and `A_eq x = b_eq`) over the stacked
/// demand vector `x = [x_1; ...; x_N]`, each `x_i = [p_1, q_1, p_2, q_2, ...]`.
///
/// Rows are grouped by timestep. Within a step, equality rows (if any) come
/// first and are followed by the inequality rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedConstraints {
    steps: usize,
    rows_per_step: usize,
    eq_rows_per_step: usize,
    prosumers: usize,
    /// Indexed by (step, row, prosumer, component).
    coef: Vec<f64>,
    b: Vec<f64>,
    labels: Vec<RowLabel>,
    /// Factor each row was multiplied by (1 means the row is in pu).
    scale: Vec<f64>,
}

impl LinearizedConstraints {
    fn with_row_factors(&self, factors: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        let n2 = 2 * self.prosumers;
        for row in 0..self.rows() {
            let f = factors(row);
            assert!(f > 0.0 && f.is_finite(), "row scale must be positive");
            out.coef[row * n2..(row + 1) * n2].iter_mut().for_each(|v| *v *= f);
            out.b[row] *= f;
            out.scale[row] *= f;
        }
        out
    }

    /// The same constraints with every row multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        self.with_row_factors(|_| factor)
    }

    /// Every row divided by its largest coefficient magnitude, then multiplied
    /// by `factor`. Rows without coefficients are only multiplied.
    pub fn equilibrated(&self, factor: f64) -> Self {
        let n2 = 2 * self.prosumers;
        self.with_row_factors(|row| {
            let peak = self.coef[row * n2..(row + 1) * n2].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 0.0 { factor / peak } else { factor }
        })
    }

    /// The same constraints with row `j` scaled by `scales[j]` relative to pu,
    /// e.g. to give a re-linearization the scaling of the previous one so
    /// that multipliers keep their units.
    pub fn with_row_scales(&self, scales: &[f64]) -> Self {
        assert_eq!(self.rows(), scales.len(), "row layouts differ");
        self.with_row_factors(|row| scales[row] / self.scale[row])
    }

    /// Factors relating each row to pu.
    pub fn row_scales(&self) -> &[f64] {
        &self.scale
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn prosumers(&self) -> usize {
        self.prosumers
    }

    pub fn rows_per_step(&self) -> usize {
        self.rows_per_step
    }

    pub fn rows(&self) -> usize {
        self.steps * self.rows_per_step
    }

    pub fn cols(&self) -> usize {
        self.prosumers * 2 * self.steps
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn labels(&self) -> &[RowLabel] {
        &self.labels
    }

    pub fn is_equality(&self, row: usize) -> bool {
        row % self.rows_per_step < self.eq_rows_per_step
    }

    pub fn equality_rows(&self) -> usize {
        self.eq_rows_per_step * self.steps
    }

    #[inline]
    fn at(&self, t: usize, row: usize, i: usize, comp: usize) -> f64 {
        self.coef[((t * self.rows_per_step + row) * self.prosumers + i) * 2 + comp]
    }

    pub fn prosumer_block(&self, i: usize) -> ProsumerBlock {
        assert!(i < self.prosumers);
        let mut coef = Vec::with_capacity(self.rows() * 2);
        for t in 0..self.steps {
            for r in 0..self.rows_per_step {
                coef.push(self.at(t, r, i, 0));
                coef.push(self.at(t, r, i, 1));
            }
        }
        ProsumerBlock { steps: self.steps, rows_per_step: self.rows_per_step, coef }
    }

    /// `A x` for per-prosumer demand vectors.
    pub fn apply(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(xs.len(), self.prosumers);
        let mut out = vec![0.0; self.rows()];
        for t in 0..self.steps {
            for r in 0..self.rows_per_step {
                let mut acc = 0.0;
                for (i, x) in xs.iter().enumerate() {
                    acc += self.at(t, r, i, 0) * x[2 * t] + self.at(t, r, i, 1) * x[2 * t + 1];
                }
                out[t * self.rows_per_step + r] = acc;
            }
        }
        out
    }

    /// Dense `A` with columns ordered as the stacked demand vector.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let k2 = 2 * self.steps;
        let mut m = DMatrix::zeros(self.rows(), self.cols());
        for t in 0..self.steps {
            for r in 0..self.rows_per_step {
                for i in 0..self.prosumers {
                    for c in 0..2 {
                        m[(t * self.rows_per_step + r, i * k2 + 2 * t + c)] = self.at(t, r, i, c);
                    }
                }
            }
        }
        m
    }

    /// Largest violation `max(A x - b)` over inequality rows (and `|A x - b|`
    /// over equality rows), clipped at zero, in pu.
    pub fn max_violation(&self, xs: &[Vec<f64>]) -> f64 {
        let ax = self.apply(xs);
        ax.iter()
            .zip(&self.b)
            .enumerate()
            .map(|(row, (a, b))| {
                let v = if self.is_equality(row) { (a - b).abs() } else { a - b };
                v / self.scale[row]
            })
            .fold(0.0, f64::max)
    }

    /// Row-major dense dump with one labelled row per line, for debugging.
    pub fn dump(&self) -> String {
        let dense = self.to_dense();
        let mut out = String::new();
        for (row, label) in self.labels.iter().enumerate() {
            let _ = write!(
                out,
                "{:?}\t{}\t{}\t{}",
                label.kind,
                label.bus.as_deref().unwrap_or("-"),
                label.step,
                self.b[row]
            );
            for c in 0..dense.ncols() {
                let _ = write!(out, "\t{}", dense[(row, c)]);
            }
            out.push('\n');
        }
        out
    }
}

/// The DSO's view of the grid: network, limits and where each prosumer is
/// attached. Owns the AC oracle used for linearization and error checks.
#[derive(Debug, Clone)]
pub struct DsoGrid {
    model: NetworkModel,
    power_flow: PowerFlow,
    limits: GridLimits,
    /// Non-slack position of each prosumer's bus.
    attachments: Vec<usize>,
    /// Non-slack positions with voltage rows.
    monitored: Vec<usize>,
    slack_voltage: Vec<f64>,
    /// pu per kW of prosumer demand.
    demand_to_pu: f64,
}

impl DsoGrid {
    /// `attachments` names the bus of each prosumer, `slack_voltage` gives the
    /// slack magnitude for every step of the horizon. All non-slack buses are
    /// monitored unless [`DsoGrid::with_monitored`] narrows the set.
    pub fn new(
        model: NetworkModel,
        limits: GridLimits,
        attachments: &[String],
        slack_voltage: Vec<f64>,
    ) -> Result<Self, GridError> {
        model.validate()?;
        limits.validate()?;
        let attachments = attachments
            .iter()
            .map(|bus| model.non_slack_position(bus).ok_or_else(|| GridError::UnknownBus(bus.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let monitored = (0..model.non_slack().len()).collect();
        let power_flow = PowerFlow::new(&model)?;
        let demand_to_pu = model.base.kw_to_pu(1.0);
        Ok(Self { model, power_flow, limits, attachments, monitored, slack_voltage, demand_to_pu })
    }

    pub fn with_monitored(mut self, buses: &[String]) -> Result<Self, GridError> {
        self.monitored = buses
            .iter()
            .map(|bus| self.model.non_slack_position(bus).ok_or_else(|| GridError::UnknownBus(bus.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self)
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn limits(&self) -> &GridLimits {
        &self.limits
    }

    pub fn power_flow(&self) -> &PowerFlow {
        &self.power_flow
    }

    pub fn steps(&self) -> usize {
        self.slack_voltage.len()
    }

    pub fn prosumers(&self) -> usize {
        self.attachments.len()
    }

    pub fn slack_voltage(&self) -> &[f64] {
        &self.slack_voltage
    }

    pub fn rows_per_step(&self) -> usize {
        2 * self.monitored.len() + 4
    }

    /// Nodal injections at step `t` produced by the prosumer demands (kW).
    pub fn injections(&self, xs: &[Vec<f64>], t: usize) -> Injections {
        let mut inj = Injections::zeros(self.model.non_slack().len());
        for (x, &bus) in xs.iter().zip(&self.attachments) {
            inj.p[bus] += x[2 * t] * self.demand_to_pu;
            inj.q[bus] += x[2 * t + 1] * self.demand_to_pu;
        }
        inj
    }

    pub fn operating_point(&self, xs: &[Vec<f64>]) -> OperatingPoint {
        OperatingPoint { steps: (0..self.steps()).map(|t| self.injections(xs, t)).collect() }
    }

    /// Linearizes the voltage and slack-bus constraints around `op`.
    pub fn assemble(&self, op: &OperatingPoint) -> Result<LinearizedConstraints, GridError> {
        let steps = self.steps();
        if op.steps.len() != steps {
            return Err(GridError::Dimension(format!(
                "operating point has {} steps, horizon has {steps}",
                op.steps.len()
            )));
        }
        let n = self.prosumers();
        let rps = self.rows_per_step();
        let lim = &self.limits;
        let p_max = lim.p_slack_max();
        let ns = self.model.non_slack();
        let mut coef = Vec::with_capacity(steps * rps * n * 2);
        let mut b = Vec::with_capacity(steps * rps);
        let mut labels = Vec::with_capacity(steps * rps);
        for (t, inj) in op.steps.iter().enumerate() {
            let (s, _) = self.power_flow.sensitivities(inj, self.slack_voltage[t])?;
            let dot = |kp: &dyn Fn(usize) -> f64, kq: &dyn Fn(usize) -> f64| -> f64 {
                (0..inj.len()).map(|j| kp(j) * inj.p[j] + kq(j) * inj.q[j]).sum()
            };
            let mut push_row = |kind: ConstraintKind,
                                bus: Option<String>,
                                sign: f64,
                                kp: &dyn Fn(usize) -> f64,
                                kq: &dyn Fn(usize) -> f64,
                                rhs: f64| {
                for &a in &self.attachments {
                    coef.push(sign * kp(a) * self.demand_to_pu);
                    coef.push(sign * kq(a) * self.demand_to_pu);
                }
                b.push(rhs);
                labels.push(RowLabel { kind, bus, step: t });
            };
            for &j in &self.monitored {
                let kp = |c: usize| s.k_vp[(j, c)];
                let kq = |c: usize| s.k_vq[(j, c)];
                let kx = dot(&kp, &kq);
                let id = Some(self.model.buses[ns[j]].id.clone());
                push_row(ConstraintKind::VoltageMin, id.clone(), -1.0, &kp, &kq, s.v_star[j] - lim.v_min - kx);
                push_row(ConstraintKind::VoltageMax, id, 1.0, &kp, &kq, lim.v_max - s.v_star[j] + kx);
            }
            let qp = |c: usize| s.k_sq_p[c];
            let qq = |c: usize| s.k_sq_q[c];
            let kx = dot(&qp, &qq);
            push_row(ConstraintKind::SlackQUpper, None, 1.0, &qp, &qq, lim.q_slack_max - s.q_slack_star + kx);
            push_row(ConstraintKind::SlackQLower, None, -1.0, &qp, &qq, lim.q_slack_max + s.q_slack_star - kx);
            let pp = |c: usize| s.k_sp_p[c];
            let pq = |c: usize| s.k_sp_q[c];
            let kx = dot(&pp, &pq);
            push_row(ConstraintKind::SlackPUpper, None, 1.0, &pp, &pq, p_max - s.p_slack_star + kx);
            push_row(ConstraintKind::SlackPLower, None, -1.0, &pp, &pq, p_max + s.p_slack_star - kx);
        }
        Ok(LinearizedConstraints {
            steps,
            rows_per_step: rps,
            eq_rows_per_step: 0,
            prosumers: n,
            coef,
            b,
            labels,
            scale: vec![1.0; steps * rps],
        })
    }

    /// Linearizes around the operating point produced by the given demands.
    pub fn linearize(&self, xs: &[Vec<f64>]) -> Result<LinearizedConstraints, GridError> {
        self.assemble(&self.operating_point(xs))
    }

    /// AC power flow for every step of the horizon.
    pub fn power_flows(&self, xs: &[Vec<f64>]) -> Result<Vec<PowerFlowSolution>, GridError> {
        (0..self.steps())
            .map(|t| self.power_flow.solve(&self.injections(xs, t), self.slack_voltage[t]))
            .collect()
    }

    /// The nonlinear constraint functions `g(x)` in the row order of
    /// [`DsoGrid::assemble`], so that feasibility reads `g(x) <= 0`.
    pub fn evaluate(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, GridError> {
        let lim = &self.limits;
        let p_max = lim.p_slack_max();
        let ns = self.model.non_slack();
        let mut g = Vec::with_capacity(self.steps() * self.rows_per_step());
        for sol in self.power_flows(xs)? {
            if !sol.converged {
                return Err(GridError::OracleFailed);
            }
            for &j in &self.monitored {
                let v = sol.v[ns[j]];
                g.push(lim.v_min - v);
                g.push(v - lim.v_max);
            }
            g.push(sol.q_slack - lim.q_slack_max);
            g.push(-sol.q_slack - lim.q_slack_max);
            g.push(sol.p_slack - p_max);
            g.push(-sol.p_slack - p_max);
        }
        Ok(g)
    }

    /// `‖g(x) − (A x − b)‖_∞` in pu, whatever the row scale of `lin`.
    pub fn linearization_error(
        &self,
        lin: &LinearizedConstraints,
        xs: &[Vec<f64>],
    ) -> Result<f64, GridError> {
        let g = self.evaluate(xs)?;
        let ax = lin.apply(xs);
        Ok(g.iter()
            .zip(ax.iter().zip(lin.b()))
            .zip(lin.row_scales())
            .map(|((g, (a, b)), s)| (g - (a - b) / s).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Bus, BusKind, Line, PerUnitBase, SlackVoltage};

    fn feeder() -> NetworkModel {
        NetworkModel {
            buses: vec![
                Bus { id: "s".into(), kind: BusKind::Slack },
                Bus { id: "a".into(), kind: BusKind::Pq },
                Bus { id: "b".into(), kind: BusKind::Pq },
            ],
            lines: vec![
                Line { from: "s".into(), to: "a".into(), r_ohm: 0.5851, x_ohm: 0.3057, b_siemens: 0.0 },
                Line { from: "a".into(), to: "b".into(), r_ohm: 0.1941, x_ohm: 0.1613, b_siemens: 0.0 },
            ],
            base: PerUnitBase::default(),
            slack_voltage: SlackVoltage::default(),
        }
    }

    fn limits() -> GridLimits {
        GridLimits { v_min: 0.9, v_max: 1.05, q_slack_max: 0.5, s_slack_max: 5.0 }
    }

    fn grid(steps: usize, attach: &[&str]) -> DsoGrid {
        let attach: Vec<String> = attach.iter().map(|s| s.to_string()).collect();
        DsoGrid::new(feeder(), limits(), &attach, vec![1.0; steps]).unwrap()
    }

    #[test]
    fn one_step_one_monitored_bus_has_six_rows() {
        let g = grid(1, &["b"]).with_monitored(&["b".into()]).unwrap();
        let lin = g.linearize(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(lin.rows(), 6);
        let kinds: Vec<_> = lin.labels().iter().map(|l| l.kind).collect();
        assert_eq!(
            kinds,
            vec![
                ConstraintKind::VoltageMin,
                ConstraintKind::VoltageMax,
                ConstraintKind::SlackQUpper,
                ConstraintKind::SlackQLower,
                ConstraintKind::SlackPUpper,
                ConstraintKind::SlackPLower
            ]
        );
    }

    #[test]
    fn invalid_limits_rejected() {
        let mut l = limits();
        l.v_min = 1.1;
        assert!(l.validate().is_err());
        let mut l = limits();
        l.q_slack_max = 6.0;
        assert!(l.validate().is_err());
        let attach = vec!["a".to_string()];
        assert!(DsoGrid::new(feeder(), l, &attach, vec![1.0]).is_err());
    }

    #[test]
    fn slack_active_limit_reserves_reactive_band() {
        let l = GridLimits { v_min: 0.9, v_max: 1.05, q_slack_max: 0.3, s_slack_max: 0.5 };
        assert!((l.p_slack_max() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn exact_at_linearization_point() {
        let g = grid(3, &["a", "b"]);
        let xs = vec![vec![1.0, 0.2, -3.0, 0.0, 0.5, -0.5], vec![-4.0, 0.1, 2.0, 1.0, 0.0, 0.0]];
        let lin = g.linearize(&xs).unwrap();
        let err = g.linearization_error(&lin, &xs).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn partition_reproduces_full_matrix() {
        let g = grid(2, &["a", "b", "b"]);
        let xs = vec![vec![1.0, 0.2, -3.0, 0.0], vec![-4.0, 0.1, 2.0, 1.0], vec![0.5; 4]];
        let lin = g.linearize(&xs).unwrap();
        let dense = lin.to_dense();
        let k2 = 4;
        for i in 0..3 {
            let block = lin.prosumer_block(i).to_dense();
            assert_eq!(block, dense.columns(i * k2, k2).into_owned());
        }
        let sum: Vec<f64> = (0..3).map(|i| lin.prosumer_block(i).mul(&xs[i])).fold(
            vec![0.0; lin.rows()],
            |acc, v| acc.iter().zip(&v).map(|(a, b)| a + b).collect(),
        );
        let stacked: Vec<f64> = xs.concat();
        let full = &dense * nalgebra::DVector::from_vec(stacked);
        assert_eq!(sum, lin.apply(&xs));
        for r in 0..lin.rows() {
            assert!((sum[r] - full[r]).abs() <= 1e-12);
        }
    }

    #[test]
    fn row_scaling_preserves_pu_quantities() {
        let g = grid(2, &["a", "b"]);
        let x0 = vec![vec![1.0, 0.2, -3.0, 0.0], vec![-4.0, 0.1, 2.0, 1.0]];
        let xs = vec![vec![3.0, 0.5, -3.0, 0.0], vec![-4.0, 0.1, 8.0, 1.0]];
        let lin = g.linearize(&x0).unwrap();
        let eq = lin.equilibrated(2.0);
        let dense = eq.to_dense();
        for r in 0..eq.rows() {
            let peak = dense.row(r).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 2.0).abs() <= 1e-12, "row {r} peak {peak}");
        }
        assert!((eq.max_violation(&xs) - lin.max_violation(&xs)).abs() <= 1e-12);
        let e0 = g.linearization_error(&lin, &xs).unwrap();
        assert!((g.linearization_error(&eq, &xs).unwrap() - e0).abs() <= 1e-12);
        let re = g.linearize(&xs).unwrap().with_row_scales(eq.row_scales());
        assert_eq!(re.row_scales(), eq.row_scales());
        assert!(g.linearization_error(&re, &xs).unwrap() <= 1e-8);
    }

    #[test]
    fn dump_has_one_line_per_row() {
        let g = grid(2, &["a"]);
        let lin = g.linearize(&[vec![0.0; 4]]).unwrap();
        assert_eq!(lin.dump().lines().count(), lin.rows());
    }
}
