use super::scenario::{aggregate, Scenario};
use super::SimError;
use crate::coordinator::{baseline, run_coordination, Agent, CoordinationOutcome};
use crate::grid::{DsoGrid, GridLimits};
use crate::prosumer::{build_prosumer_problem, tariff_vector, ProsumerResponse};

/// Inputs of one planning problem over steps `start_step..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningInputs {
    pub start_step: usize,
    /// Per prosumer, kW per planning step.
    pub load_p: Vec<Vec<f64>>,
    pub pv: Vec<Vec<f64>>,
    /// Slack voltage per planning step, pu.
    pub slack: Vec<f64>,
    /// Initial SoC per prosumer; `None` keeps the value of the asset file.
    pub soc: Vec<Option<f64>>,
}

impl PlanningInputs {
    /// Day-ahead forecasts averaged to the planning step, from `start_step`.
    pub fn from_forecast(scenario: &Scenario, start_step: usize) -> Self {
        let f = scenario.timeline.samples_per_step();
        let cut = |v: &[f64]| aggregate(v, f)[start_step..].to_vec();
        Self {
            start_step,
            load_p: scenario.forecast.iter().map(|s| cut(&s.load_p)).collect(),
            pv: scenario.forecast.iter().map(|s| cut(&s.pv)).collect(),
            slack: cut(&scenario.slack_forecast),
            soc: vec![None; scenario.prosumers.len()],
        }
    }

    pub fn steps(&self) -> usize {
        self.slack.len()
    }
}

/// One agent per prosumer with its local problem over the planning window.
pub fn build_agents(scenario: &Scenario, inputs: &PlanningInputs) -> Result<Vec<Agent>, SimError> {
    let dt_h = scenario.timeline.dt_plan_h();
    let tariff = tariff_vector(&scenario.tariff[inputs.start_step..], dt_h);
    scenario
        .prosumers
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let problem = build_prosumer_problem(spec, &inputs.load_p[i], &inputs.pv[i], inputs.soc[i], dt_h)?;
            Ok(Agent { name: spec.name.clone(), problem, tariff: tariff.clone() })
        })
        .collect()
}

/// The DSO model over the planning window, with the voltage band narrowed by
/// `v_margin` pu on both sides.
pub fn planning_grid(scenario: &Scenario, inputs: &PlanningInputs, v_margin: f64) -> Result<DsoGrid, SimError> {
    let limits = GridLimits { v_min: scenario.limits.v_min + v_margin, v_max: scenario.limits.v_max - v_margin, ..scenario.limits };
    Ok(DsoGrid::new(scenario.network.clone(), limits, &scenario.attachments(), inputs.slack.clone())?)
}

/// AC oracle evaluation of a schedule, one entry per planning step.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCheck {
    /// Voltage magnitude per step and bus, pu.
    pub v: Vec<Vec<f64>>,
    pub p_slack: Vec<f64>,
    pub q_slack: Vec<f64>,
}

impl GridCheck {
    pub fn evaluate(grid: &DsoGrid, xs: &[Vec<f64>]) -> Result<Self, SimError> {
        let flows = grid.power_flows(xs)?;
        if flows.iter().any(|f| !f.converged) {
            return Err(crate::grid::GridError::OracleFailed.into());
        }
        Ok(Self {
            v: flows.iter().map(|f| f.v.clone()).collect(),
            p_slack: flows.iter().map(|f| f.p_slack).collect(),
            q_slack: flows.iter().map(|f| f.q_slack).collect(),
        })
    }

    pub fn max_v(&self) -> f64 {
        self.v.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_v(&self) -> f64 {
        self.v.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_q_slack(&self) -> f64 {
        self.q_slack.iter().map(|q| q.abs()).fold(0.0, f64::max)
    }

    /// `(step, bus index, voltage)` of every sample outside the limits
    /// widened by `slack` pu.
    pub fn voltage_violations(&self, limits: &GridLimits, slack: f64) -> Vec<(usize, usize, f64)> {
        let mut out = vec![];
        for (t, row) in self.v.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if v > limits.v_max + slack || v < limits.v_min - slack {
                    out.push((t, b, v));
                }
            }
        }
        out
    }
}

/// Result of the day-ahead stage.
#[derive(Debug, Clone)]
pub struct DayAhead {
    pub inputs: PlanningInputs,
    pub agents: Vec<Agent>,
    /// `None` when coordination was disabled.
    pub outcome: Option<CoordinationOutcome>,
    pub baseline: Vec<ProsumerResponse>,
    /// The applied schedules: coordinated responses, or the baseline.
    pub schedules: Vec<ProsumerResponse>,
    pub check: GridCheck,
}

impl DayAhead {
    pub fn coordinated(&self) -> bool {
        self.outcome.is_some()
    }
}

/// Full-horizon planning on the day-ahead forecasts, with or without
/// coordination by the DSO.
pub fn run_day_ahead(scenario: &Scenario, coordination: bool) -> Result<DayAhead, SimError> {
    let inputs = PlanningInputs::from_forecast(scenario, 0);
    let agents = build_agents(scenario, &inputs)?;
    let grid = planning_grid(scenario, &inputs, 0.0)?;
    let (outcome, base) = if coordination {
        let out = run_coordination(&agents, &grid, &scenario.admm)?;
        let base = out.baseline.clone();
        (Some(out), base)
    } else {
        (None, baseline(&agents, &scenario.admm)?)
    };
    let schedules = outcome.as_ref().map_or_else(|| base.clone(), |o| o.responses.clone());
    let xs: Vec<Vec<f64>> = schedules.iter().map(|r| r.x.clone()).collect();
    let check = GridCheck::evaluate(&grid, &xs)?;
    Ok(DayAhead { inputs, agents, outcome, baseline: base, schedules, check })
}
