use super::day_ahead::{build_agents, planning_grid, DayAhead, PlanningInputs};
use super::scenario::Scenario;
use super::trace::{CycleRecord, RtRecord, TraceLog};
use super::SimError;
use crate::coordinator::{baseline, init_state, iterate, AdmmConfig, AdmmState, CoordinationReport};
use crate::grid::{GridError, Injections, PowerFlow};
use crate::prosumer::{rt_control, ProsumerResponse, RtInput};

/// Most recent realized value.
pub fn persistent_forecast(history: &[f64]) -> Result<f64, SimError> {
    history.last().copied().ok_or_else(|| SimError::Forecast("empty history".into()))
}

/// Per-step targets of every prosumer from one planning run.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub start_step: usize,
    /// Interleaved `(p, q)` demand per prosumer, kW / kvar.
    pub x: Vec<Vec<f64>>,
    /// Curtailed fraction of the PV potential per prosumer and step.
    pub curtailment: Vec<Vec<f64>>,
}

impl Targets {
    pub fn from_responses(start_step: usize, responses: &[ProsumerResponse], pv_potential: &[Vec<f64>]) -> Self {
        let curtailment = responses
            .iter()
            .zip(pv_potential)
            .map(|(r, pot)| {
                pot.iter()
                    .enumerate()
                    .map(|(t, &p)| if p > 1e-9 { (1.0 - r.resources.total_pv(t) / p).clamp(0.0, 1.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { start_step, x: responses.iter().map(|r| r.x.clone()).collect(), curtailment }
    }

    /// `(p_target, q_target, curtailment)` of prosumer `i` at planning step `k`.
    pub fn at(&self, i: usize, k: usize) -> (f64, f64, f64) {
        let t = k - self.start_step;
        (self.x[i][2 * t], self.x[i][2 * t + 1], self.curtailment[i][t])
    }
}

/// The emulated prosumers and grid: realized series, BESS states and the AC
/// oracle.
struct Plant<'a> {
    scenario: &'a Scenario,
    pf: PowerFlow,
    /// Non-slack position of every prosumer's bus.
    positions: Vec<usize>,
    soc: Vec<f64>,
    /// Last applied BESS setpoint, kept when the controller fails.
    last: Vec<(f64, f64)>,
    log: TraceLog,
}

impl<'a> Plant<'a> {
    fn new(scenario: &'a Scenario, soc: Vec<f64>) -> Result<Self, SimError> {
        let net = &scenario.network;
        let positions = scenario
            .prosumers
            .iter()
            .map(|p| net.non_slack_position(&p.bus).ok_or_else(|| GridError::UnknownBus(p.bus.clone())))
            .collect::<Result<_, _>>()?;
        let log = TraceLog::new(
            net.buses.iter().map(|b| b.id.clone()).collect(),
            scenario.prosumers.iter().map(|p| p.name.clone()).collect(),
        );
        let n = scenario.prosumers.len();
        Ok(Self { scenario, pf: PowerFlow::new(net)?, positions, soc, last: vec![(0.0, 0.0); n], log })
    }

    /// Runs one real-time step starting at `sample`.
    fn step(&mut self, sample: usize, targets: &Targets) -> Result<(), SimError> {
        let sc = self.scenario;
        let tl = &sc.timeline;
        let t_s = tl.sample_time(sample);
        let k = tl.step_at(t_s);
        let dt_h = tl.t2_h();
        let n = sc.prosumers.len();
        let mut rec = RtRecord {
            t_s,
            v: vec![],
            soc: vec![f64::NAN; n],
            pv_potential: vec![0.0; n],
            pv: vec![0.0; n],
            p_b: vec![0.0; n],
            q_b: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
            p_slack: 0.0,
            q_slack: 0.0,
        };
        let mut inj = Injections::zeros(self.pf.n_buses() - 1);
        let kw_to_pu = sc.network.base.kw_to_pu(1.0);
        for (i, spec) in sc.prosumers.iter().enumerate() {
            let (p_target, q_target, curtailment) = targets.at(i, k);
            let real = &sc.realization[i];
            let load_p = real.load_p[sample];
            let pv_pot = real.pv[sample];
            let pv = pv_pot * (1.0 - curtailment);
            let (mut p_b, mut q_b) = (0.0, 0.0);
            if let Some(bess) = &spec.bess {
                // Short-term forecasts for this step use only past samples.
                let past = |v: &[f64], fallback: f64| persistent_forecast(&v[..sample]).unwrap_or(fallback);
                let load_fc = past(&real.load_p, sc.forecast[i].load_p[sample]);
                let input = RtInput {
                    soc: self.soc[i],
                    p_target,
                    q_target,
                    load_p: load_fc,
                    load_q: spec.load_q(&[load_fc])[0],
                    pv_potential: past(&real.pv, sc.forecast[i].pv[sample]),
                    curtailment,
                    dt_h,
                };
                (p_b, q_b) = match rt_control(bess, &input, &sc.admm.qp) {
                    Ok(set) => set,
                    Err(e) => {
                        self.log.events.push(format!("{t_s} s: {} real-time control failed ({e}), setpoint frozen", spec.name));
                        let (p, q) = self.last[i];
                        let k_soc = dt_h / bess.capacity_kwh;
                        let hi = ((self.soc[i] - bess.soc_min) / k_soc).max(0.0);
                        let lo = -((bess.soc_max - self.soc[i]) / k_soc).max(0.0);
                        (p.clamp(lo, hi), q)
                    }
                };
                self.last[i] = (p_b, q_b);
                self.soc[i] += bess.soc_delta(p_b, dt_h);
                rec.soc[i] = self.soc[i];
            }
            let p = load_p - pv - p_b;
            let q = spec.load_q(&[load_p])[0] - q_b;
            inj.p[self.positions[i]] += p * kw_to_pu;
            inj.q[self.positions[i]] += q * kw_to_pu;
            rec.pv_potential[i] = pv_pot;
            rec.pv[i] = pv;
            rec.p_b[i] = p_b;
            rec.q_b[i] = q_b;
            rec.p[i] = p;
            rec.q[i] = q;
        }
        let sol = self.pf.solve(&inj, sc.slack_realized[sample])?;
        if !sol.converged {
            return Err(GridError::OracleFailed.into());
        }
        rec.v = sol.v;
        rec.p_slack = sol.p_slack;
        rec.q_slack = sol.q_slack;
        self.log.push_rt(rec)
    }
}

/// SoC of every prosumer at the start of planning step `k` of a schedule.
fn planned_soc(scenario: &Scenario, schedules: &[ProsumerResponse], k: usize) -> Vec<f64> {
    scenario
        .prosumers
        .iter()
        .zip(schedules)
        .map(|(p, r)| match (&p.bess, r.resources.bess.first()) {
            (Some(b), Some(traj)) if k > 0 => traj.soc[k - 1].clamp(b.soc_min, b.soc_max),
            (Some(b), _) => b.soc_init,
            _ => f64::NAN,
        })
        .collect()
}

fn window_samples(scenario: &Scenario) -> std::ops::Range<usize> {
    let tl = &scenario.timeline;
    tl.sample_at(tl.window_start_s)..tl.sample_at(tl.window_end_s)
}

/// Real-time loop over the simulation window tracking the day-ahead targets
/// only, without intra-day re-coordination.
pub fn run_rt_loop(scenario: &Scenario, day_ahead: &DayAhead) -> Result<TraceLog, SimError> {
    let targets = Targets::from_responses(0, &day_ahead.schedules, &day_ahead.inputs.pv);
    let k0 = scenario.timeline.step_at(scenario.timeline.window_start_s);
    let mut plant = Plant::new(scenario, planned_soc(scenario, &day_ahead.schedules, k0))?;
    for s in window_samples(scenario) {
        plant.step(s, &targets)?;
    }
    Ok(plant.log)
}

/// Intra-day inputs at planning step `k`: day-ahead forecasts, with the first
/// interval replaced by the last realized samples and the measured SoC.
fn intraday_inputs(scenario: &Scenario, k: usize, soc: &[f64]) -> Result<PlanningInputs, SimError> {
    let mut inputs = PlanningInputs::from_forecast(scenario, k);
    let s = scenario.timeline.sample_at(scenario.timeline.horizon_start_s + k as u32 * scenario.timeline.dt_plan_s);
    for (i, real) in scenario.realization.iter().enumerate() {
        inputs.load_p[i][0] = persistent_forecast(&real.load_p[..s])?;
        inputs.pv[i][0] = persistent_forecast(&real.pv[..s])?;
    }
    inputs.slack[0] = persistent_forecast(&scenario.slack_realized[..s])?;
    inputs.soc = scenario
        .prosumers
        .iter()
        .zip(soc)
        .map(|(p, &v)| p.bess.map(|b| v.clamp(b.soc_min, b.soc_max)))
        .collect();
    Ok(inputs)
}

/// `state` moved forward by `shift` planning steps: multipliers, copies and
/// demands of the dropped steps are discarded.
fn shifted(state: &AdmmState, shift: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let rps = state.lin.rows_per_step();
    let rows = |v: &Vec<Vec<f64>>| v.iter().map(|r| r[shift * rps..].to_vec()).collect::<Vec<_>>();
    let xs = state.xs.iter().map(|x| x[2 * shift..].to_vec()).collect();
    (xs, rows(&state.z), rows(&state.y), state.lin.row_scales()[shift * rps..].to_vec())
}

struct Cycle {
    targets: Targets,
    state: Option<(usize, AdmmState)>,
    report: Option<CoordinationReport>,
}

fn coordinate_cycle(
    scenario: &Scenario,
    inputs: &PlanningInputs,
    warm: Option<&(usize, AdmmState)>,
    coordination: bool,
) -> Result<Cycle, SimError> {
    let k = inputs.start_step;
    let agents = build_agents(scenario, inputs)?;
    let cfg = AdmmConfig { max_iter: scenario.timeline.mpc_budget_iters, ..scenario.admm };
    let base = baseline(&agents, &cfg)?;
    if !coordination {
        return Ok(Cycle { targets: Targets::from_responses(k, &base, &inputs.pv), state: None, report: None });
    }
    let grid = planning_grid(scenario, inputs, scenario.timeline.mpc_v_margin_pu)?;
    let tariffs = agents.iter().map(|a| a.tariff.clone()).collect();
    let state = match warm {
        Some((start, prev)) if *start <= k => {
            let (xs, z, y, scales) = shifted(prev, k - start);
            let lin = grid.linearize(&xs)?.with_row_scales(&scales);
            let mut st = init_state(lin, xs, tariffs, prev.rho)?;
            st.z = z;
            st.y = y;
            st
        }
        _ => {
            let xs: Vec<Vec<f64>> = base.iter().map(|r| r.x.clone()).collect();
            let lin = cfg.scale_rows(&grid.linearize(&xs)?);
            init_state(lin, xs, tariffs, cfg.rho0)?
        }
    };
    let out = iterate(&agents, &grid, &cfg, state, base)?;
    Ok(Cycle {
        targets: Targets::from_responses(k, &out.responses, &inputs.pv),
        state: Some((k, out.state)),
        report: Some(out.report),
    })
}

/// Closed loop over the simulation window: every `T1` the prosumers and the
/// DSO re-plan on the shrinking horizon from measured SoC and persistence
/// forecasts; every `T2` the real-time controllers track the latest targets.
///
/// Each re-plan is assumed to complete instantly, so its targets apply from
/// the cycle start. A failed cycle keeps the previous targets.
pub fn run_receding_horizon(scenario: &Scenario, day_ahead: &DayAhead, coordination: bool) -> Result<TraceLog, SimError> {
    let tl = scenario.timeline;
    let k_start = tl.step_at(tl.window_start_s);
    let mut plant = Plant::new(scenario, planned_soc(scenario, &day_ahead.schedules, k_start))?;
    let mut targets = Targets::from_responses(0, &day_ahead.schedules, &day_ahead.inputs.pv);
    let mut warm = day_ahead.outcome.as_ref().map(|o| (0, o.state.clone()));
    let per_cycle = (tl.t1_s / tl.t2_s) as usize;
    for s in window_samples(scenario) {
        let t_s = tl.sample_time(s);
        if (s - window_samples(scenario).start) % per_cycle == 0 {
            let k = tl.step_at(t_s);
            let cycle = intraday_inputs(scenario, k, &plant.soc)
                .and_then(|inputs| coordinate_cycle(scenario, &inputs, warm.as_ref(), coordination));
            let steps = tl.steps() - k;
            match cycle {
                Ok(c) => {
                    let rec = match &c.report {
                        Some(r) => CycleRecord {
                            t_s,
                            start_step: k,
                            steps,
                            status: Some(r.status),
                            iterations: r.iterations,
                            max_r: r.max_r,
                            max_s: r.max_s,
                            rho: r.rho,
                            relinearizations: r.relinearizations,
                            compensation: r.total_compensation,
                            reused: false,
                        },
                        None => CycleRecord {
                            t_s,
                            start_step: k,
                            steps,
                            status: None,
                            iterations: 0,
                            max_r: 0.0,
                            max_s: 0.0,
                            rho: 0.0,
                            relinearizations: 0,
                            compensation: 0.0,
                            reused: false,
                        },
                    };
                    plant.log.push_cycle(rec, c.report)?;
                    targets = c.targets;
                    if c.state.is_some() {
                        warm = c.state;
                    }
                }
                Err(e) => {
                    plant.log.events.push(format!("{t_s} s: intra-day cycle failed ({e}), previous targets kept"));
                    let rec = CycleRecord {
                        t_s,
                        start_step: k,
                        steps,
                        status: None,
                        iterations: 0,
                        max_r: f64::NAN,
                        max_s: f64::NAN,
                        rho: f64::NAN,
                        relinearizations: 0,
                        compensation: f64::NAN,
                        reused: true,
                    };
                    plant.log.push_cycle(rec, None)?;
                }
            }
        }
        plant.step(s, &targets)?;
    }
    Ok(plant.log)
}
