use serde::Serialize;
use serde_json::json;

use super::config::{Command, RunConfig};
use super::output::{write_all, Artifact, LabeledTable};
use super::CliError;
use crate::coordinator::{responses_at_rho, run_coordination, AdmmConfig, CoordinationReport};
use crate::prosumer::ProsumerResponse;
use crate::qp::dot;
use crate::sim::{
    iteration_table, planning_grid, run_day_ahead, run_receding_horizon, run_rt_loop, DayAhead, Scenario, SimError,
    Table, TraceLog,
};

/// Artifacts of a finished run and the lines printed for the user.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub lines: Vec<String>,
    /// Files written, manifest included.
    pub written: usize,
}

/// Runs `config` and writes its artifacts and manifest.
pub fn execute(config: &RunConfig) -> Result<RunOutput, CliError> {
    let sc = config.load_scenario()?;
    let mut lines = vec![];
    let coord = config.coordination;
    let artifacts = match config.command {
        Command::Validate => {
            lines.push(format!(
                "scenario {:?} is valid: {} buses, {} prosumers, {} planning steps",
                sc.name,
                sc.network.buses.len(),
                sc.prosumers.len(),
                sc.timeline.steps()
            ));
            vec![Artifact::json(
                "validation.json",
                &json!({
                    "valid": true,
                    "name": sc.name,
                    "buses": sc.network.buses.len(),
                    "prosumers": sc.prosumers.len(),
                    "steps": sc.timeline.steps(),
                    "samples": sc.timeline.samples(),
                }),
            )?]
        }
        Command::Dayahead => {
            let da = run_day_ahead(&sc, coord)?;
            dayahead_artifacts(&sc, &da, &mut lines)?
        }
        Command::Mpc => {
            let da = run_day_ahead(&sc, coord)?;
            let log = run_receding_horizon(&sc, &da, coord)?;
            trace_artifacts("mpc", &sc, &log, &mut lines)?
        }
        Command::Rt => {
            let da = run_day_ahead(&sc, coord)?;
            let log = run_rt_loop(&sc, &da)?;
            trace_artifacts("rt", &sc, &log, &mut lines)?
        }
        Command::Full => {
            let da = run_day_ahead(&sc, coord)?;
            let mut out = dayahead_artifacts(&sc, &da, &mut lines)?;
            if let Some(o) = &da.outcome {
                let t = compare_table(&o.report);
                out.push(Artifact::labeled("compare.csv", &t)?);
            }
            let log = run_receding_horizon(&sc, &da, coord)?;
            out.extend(trace_artifacts("mpc", &sc, &log, &mut lines)?);
            out
        }
        Command::Compare => {
            let da = run_day_ahead(&sc, true)?;
            let report = &da.outcome.as_ref().expect("coordinated run").report;
            let t = compare_table(report);
            lines.push(format!("tariff cost, CHF ({} after {} iterations)", status(report), report.iterations));
            lines.push(t.render(4));
            vec![Artifact::labeled("compare.csv", &t)?, Artifact::json("compare_report.json", report)?]
        }
        Command::RhoSweep => rho_study(&sc, &mut lines)?,
    };
    let written = write_all(config, &artifacts, config.seed_applies()?)?;
    Ok(RunOutput { artifacts, lines, written })
}

fn status(r: &CoordinationReport) -> String {
    format!("{:?}", r.status).to_lowercase()
}

/// Per-prosumer tariff cost without and with coordination; the difference
/// is the compensation. The last row holds the totals.
pub fn compare_table(report: &CoordinationReport) -> LabeledTable {
    let mut t = LabeledTable::new("prosumer", &["without", "with", "difference"]);
    for (i, name) in report.names.iter().enumerate() {
        t.push(name, vec![report.cost_without[i], report.cost_with[i], report.compensation[i]]);
    }
    t.push("total", vec![report.total_without, report.total_with, report.total_compensation]);
    t
}

fn step_time(sc: &Scenario, k: usize) -> f64 {
    (sc.timeline.horizon_start_s + k as u32 * sc.timeline.dt_plan_s) as f64
}

fn bess_at(r: &ProsumerResponse, t: usize) -> (f64, f64, f64) {
    r.resources.bess.first().map_or((0.0, 0.0, f64::NAN), |b| (b.p[t], b.q[t], b.soc[t]))
}

fn dayahead_artifacts(sc: &Scenario, da: &DayAhead, lines: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let k = da.inputs.steps();
    let k0 = da.inputs.start_step;
    let names: Vec<&str> = sc.prosumers.iter().map(|p| p.name.as_str()).collect();
    let fields = ["p", "q", "p_b", "q_b", "soc", "pv", "pv_potential", "load_p"];
    let mut header = vec!["t_s".to_string(), "price".into()];
    for n in &names {
        header.extend(fields.iter().map(|f| format!("{n}.{f}")));
    }
    let mut schedule = Table::new(header);
    for t in 0..k {
        let mut row = vec![step_time(sc, k0 + t), sc.tariff[k0 + t]];
        for (i, r) in da.schedules.iter().enumerate() {
            let (p_b, q_b, soc) = bess_at(r, t);
            let pv = r.resources.pv.first().map_or(0.0, |v| v[t]);
            row.extend([r.x[2 * t], r.x[2 * t + 1], p_b, q_b, soc, pv, da.inputs.pv[i][t], da.inputs.load_p[i][t]]);
        }
        schedule.push(row);
    }

    let bus_ids: Vec<&str> = sc.network.buses.iter().map(|b| b.id.as_str()).collect();
    let mut header = vec!["t_s".to_string()];
    header.extend(bus_ids.iter().map(|b| format!("v.{b}")));
    header.extend(["p_slack".into(), "q_slack".into()]);
    let mut grid = Table::new(header);
    for t in 0..k {
        let mut row = vec![step_time(sc, k0 + t)];
        row.extend_from_slice(&da.check.v[t]);
        row.extend([da.check.p_slack[t], da.check.q_slack[t]]);
        grid.push(row);
    }

    let violations = da.check.voltage_violations(&sc.limits, 0.0);
    let q_excess = da.check.max_abs_q_slack() - sc.limits.q_slack_max;
    lines.push(format!(
        "day-ahead {}: V in [{:.4}, {:.4}] pu, {} voltage samples outside [{}, {}], max |q_slack| {:.4} pu (limit {})",
        if da.coordinated() { "with coordination" } else { "without coordination" },
        da.check.min_v(),
        da.check.max_v(),
        violations.len(),
        sc.limits.v_min,
        sc.limits.v_max,
        da.check.max_abs_q_slack(),
        sc.limits.q_slack_max
    ));

    let mut out = vec![Artifact::table("dayahead_schedule.csv", &schedule)?, Artifact::table("dayahead_grid.csv", &grid)?];
    let mut summary = json!({
        "coordinated": da.coordinated(),
        "steps": k,
        "max_v": da.check.max_v(),
        "min_v": da.check.min_v(),
        "max_abs_q_slack": da.check.max_abs_q_slack(),
        "q_slack_excess": q_excess.max(0.0),
        "voltage_violations": violations.iter().map(|&(t, b, v)| json!({
            "t_s": step_time(sc, k0 + t),
            "bus": bus_ids[b],
            "v": v,
        })).collect::<Vec<_>>(),
        "cost": names.iter().zip(&da.schedules).zip(&da.agents).map(|((n, r), a)| {
            json!({ "prosumer": n, "chf": dot(&a.tariff, &r.x) })
        }).collect::<Vec<_>>(),
    });

    if let Some(o) = &da.outcome {
        let r = &o.report;
        lines.push(format!(
            "coordination {} after {} iterations: max r {:.2e}, max s {:.2e}, rho {:.3}, compensation {:.4} CHF",
            status(r),
            r.iterations,
            r.max_r,
            r.max_s,
            r.rho,
            r.total_compensation
        ));
        let dt_h = sc.timeline.dt_plan_h();
        let mut header = vec!["t_s".to_string(), "price".into()];
        header.extend(names.iter().map(|n| format!("{n}.price")));
        let mut prices = Table::new(header);
        let marginals: Vec<Vec<f64>> = r.signals.iter().zip(&o.responses).map(|(s, x)| s.marginal(&x.x)).collect();
        for t in 0..k {
            let mut row = vec![step_time(sc, k0 + t), sc.tariff[k0 + t]];
            row.extend(marginals.iter().map(|m| m[2 * t] / dt_h));
            prices.push(row);
        }
        out.push(Artifact::table("dayahead_prices.csv", &prices)?);
        out.push(Artifact::table("dayahead_iterations.csv", &iteration_table(&o.state.history))?);
        out.push(Artifact::json("dayahead_report.json", r)?);
        summary["status"] = json!(status(r));
        summary["iterations"] = json!(r.iterations);
        summary["compensation"] = json!(r.compensation);
    }
    out.push(Artifact::json("dayahead_summary.json", &summary)?);
    Ok(out)
}

fn trace_artifacts(prefix: &str, sc: &Scenario, log: &TraceLog, lines: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let tl = sc.timeline;
    let t2_h = tl.t2_h();
    let costs = log.realized_costs(|t| sc.tariff[tl.step_at(t)], t2_h);
    let v_max = sc.limits.v_max;
    let above: Vec<u32> = log
        .rt
        .iter()
        .filter(|r| r.v.iter().any(|&v| v > v_max))
        .map(|r| r.t_s)
        .collect();
    let digest = log.digest()?;
    let n = log.names.len();
    let curtailed: Vec<f64> =
        (0..n).map(|i| log.rt.iter().map(|r| (r.pv_potential[i] - r.pv[i]) * t2_h).sum()).collect();
    let soc_range: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let it = log.rt.iter().map(|r| r.soc[i]).filter(|v| !v.is_nan());
            [it.clone().fold(f64::INFINITY, f64::min), it.fold(f64::NEG_INFINITY, f64::max)]
        })
        .collect();
    let (t_max, v_peak) = log.max_voltage().unwrap_or((0, f64::NAN));
    lines.push(format!(
        "{prefix}: {} real-time steps, {} cycles, peak V {:.4} pu at {} s, {} steps above {} pu, digest {}",
        log.rt.len(),
        log.cycles.len(),
        v_peak,
        t_max,
        above.len(),
        v_max,
        &digest[..16]
    ));
    let per_prosumer = |v: &[f64]| log.names.iter().zip(v).map(|(n, x)| json!({ "prosumer": n, "value": x })).collect::<Vec<_>>();
    let summary = json!({
        "digest": digest,
        "samples": log.rt.len(),
        "cycles": log.cycles.len(),
        "max_v": { "t_s": t_max, "v": v_peak },
        "samples_above_v_max": above.len(),
        "times_above_v_max": above,
        "realized_cost_chf": per_prosumer(&costs),
        "curtailed_kwh": per_prosumer(&curtailed),
        "soc_range": log.names.iter().zip(&soc_range).map(|(n, r)| json!({ "prosumer": n, "min": r[0], "max": r[1] })).collect::<Vec<_>>(),
        "events": log.events,
    });
    let mut out = vec![Artifact::table(&format!("{prefix}_trace.csv"), &log.rt_table())?];
    if !log.cycles.is_empty() {
        out.push(Artifact::table(&format!("{prefix}_cycles.csv"), &log.cycle_table())?);
    }
    if !log.reports.is_empty() {
        let reports: Vec<_> = log
            .cycles
            .iter()
            .filter(|c| c.status.is_some())
            .zip(&log.reports)
            .map(|(c, r)| {
                json!({
                    "t_s": c.t_s,
                    "status": status(r),
                    "iterations": r.iterations,
                    "cost_without": r.cost_without,
                    "cost_with": r.cost_with,
                    "compensation": r.compensation,
                    "max_violation": r.max_violation,
                    "final_lin_error": r.final_lin_error,
                    "events": r.events,
                })
            })
            .collect();
        out.push(Artifact::json(&format!("{prefix}_reports.json"), &reports)?);
    }
    out.push(Artifact::json(&format!("{prefix}_summary.json"), &summary)?);
    Ok(out)
}

/// Log-spaced penalty grid from 1e-2 to 1e2, two points per decade.
pub fn rho_grid() -> Vec<f64> {
    (-2..=2)
        .flat_map(|e| [10f64.powi(e), 10f64.powi(e) * 10f64.sqrt()])
        .filter(|&r| r <= 100.0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoSweepRow {
    pub rho: f64,
    pub max_r: f64,
    pub max_s: f64,
    /// Total tariff cost above the reference coordination, CHF.
    pub extra_fees: f64,
    /// Largest violation of the linearized constraints, pu.
    pub max_violation: f64,
}

/// Coordination with the penalty held at each `rho` for exactly
/// `iterations` iterations, on the day-ahead problem of `da`.
pub fn rho_sweep(sc: &Scenario, da: &DayAhead, grid: &[f64], iterations: usize) -> Result<Vec<RhoSweepRow>, CliError> {
    let reference = &da.outcome.as_ref().ok_or_else(|| CliError::Config("rho sweep needs a coordinated run".into()))?.report;
    let dso = planning_grid(sc, &da.inputs, 0.0)?;
    grid.iter()
        .map(|&rho| {
            let cfg = AdmmConfig {
                rho0: rho,
                adaptive_rho: false,
                max_iter: iterations,
                eps_abs: f64::MIN_POSITIVE,
                eps_rel: 0.0,
                residual_cap: None,
                wall_clock_s: None,
                ..sc.admm
            };
            let r = run_coordination(&da.agents, &dso, &cfg).map_err(SimError::from)?.report;
            Ok(RhoSweepRow {
                rho,
                max_r: r.max_r,
                max_s: r.max_s,
                extra_fees: r.total_with - reference.total_with,
                max_violation: r.max_violation,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoPlateauRow {
    pub rho: f64,
    /// Total tariff cost of the responses, CHF.
    pub total_cost: f64,
    /// Change against the converged responses, CHF.
    pub cost_change: f64,
    pub max_violation: f64,
}

/// Responses to the converged day-ahead signals re-issued with each penalty
/// in `grid`, holding multipliers and copies.
pub fn rho_plateau(sc: &Scenario, da: &DayAhead, grid: &[f64]) -> Result<Vec<RhoPlateauRow>, CliError> {
    let o = da.outcome.as_ref().ok_or_else(|| CliError::Config("rho plateau needs a coordinated run".into()))?;
    let total = |xs: &[ProsumerResponse]| da.agents.iter().zip(xs).map(|(a, r)| dot(&a.tariff, &r.x)).sum::<f64>();
    let reference = total(&o.responses);
    grid.iter()
        .map(|&rho| {
            let resp = responses_at_rho(&da.agents, &o.state, rho, &sc.admm).map_err(SimError::from)?;
            let xs: Vec<Vec<f64>> = resp.iter().map(|r| r.x.clone()).collect();
            let cost = total(&resp);
            Ok(RhoPlateauRow { rho, total_cost: cost, cost_change: cost - reference, max_violation: o.state.lin.max_violation(&xs) })
        })
        .collect()
}

fn rho_study(sc: &Scenario, lines: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let da = run_day_ahead(sc, true)?;
    let o = da.outcome.as_ref().expect("coordinated run");
    lines.push(format!(
        "reference coordination {} after {} iterations, total cost {:.4} CHF",
        status(&o.report),
        o.report.iterations,
        o.report.total_with
    ));
    let grid = rho_grid();
    let sweep = rho_sweep(sc, &da, &grid, 80)?;
    let mut t = Table::new(["rho", "max_r", "max_s", "extra_fees", "max_violation"].map(String::from).to_vec());
    lines.push(format!("{:>10} {:>10} {:>10} {:>12} {:>13}", "rho", "max_r", "max_s", "extra_fees", "max_violation"));
    for r in &sweep {
        t.push(vec![r.rho, r.max_r, r.max_s, r.extra_fees, r.max_violation]);
        lines.push(format!(
            "{:>10.4} {:>10.2e} {:>10.2e} {:>12.5} {:>13.2e}",
            r.rho, r.max_r, r.max_s, r.extra_fees, r.max_violation
        ));
    }
    let mut plateau_grid = vec![1e-3];
    plateau_grid.extend(&grid);
    let plateau = rho_plateau(sc, &da, &plateau_grid)?;
    let mut p = Table::new(["rho", "total_cost", "cost_change", "max_violation"].map(String::from).to_vec());
    for r in &plateau {
        p.push(vec![r.rho, r.total_cost, r.cost_change, r.max_violation]);
    }
    Ok(vec![
        Artifact::table("rho_sweep.csv", &t)?,
        Artifact::table("rho_plateau.csv", &p)?,
        Artifact::json("rho_reference.json", &o.report)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinator::CoordinationStatus;

    #[test]
    fn rho_grid_is_log_spaced_over_four_decades() {
        let g = rho_grid();
        assert_eq!(g.len(), 9);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[8] - 100.0).abs() < 1e-12);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn compare_table_has_a_total_row() {
        let report = CoordinationReport {
            status: CoordinationStatus::Converged,
            iterations: 3,
            max_r: 0.0,
            max_s: 0.0,
            eps_pri: 1e-5,
            eps_dual: 1e-5,
            rho: 1.0,
            names: vec!["a".into(), "b".into()],
            signals: vec![],
            cost_without: vec![-1.0, -2.0],
            cost_with: vec![-0.5, -2.0],
            compensation: vec![0.5, 0.0],
            total_without: -3.0,
            total_with: -2.5,
            total_compensation: 0.5,
            relinearizations: 0,
            final_lin_error: None,
            max_violation: 0.0,
            events: vec![],
        };
        let t = compare_table(&report);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.value("a", "difference"), Some(0.5));
        let total = |c| t.value("total", c).unwrap();
        assert_eq!(total("with") - total("without"), total("difference"));
    }
}
