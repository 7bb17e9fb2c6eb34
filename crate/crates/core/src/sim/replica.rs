//! The 9-node laboratory feeder as a ready-made scenario.
//!
//! Buses without injections that only join two line sections are merged into
//! a single line; N6 is kept as the branching point of the second lateral.

use std::fs;
use std::path::{Path, PathBuf};

use super::profiles::{SlackDisturbance, SyntheticProfiles};
use super::scenario::{ProfileSource, Scenario, ScenarioFile, TimelineConfig};
use super::SimError;
use crate::coordinator::AdmmConfig;
use crate::grid::{Bus, BusKind, GridLimits, Line, NetworkModel, PerUnitBase, SlackVoltage};
use crate::prosumer::{BessSpec, ProsumerSpec};

pub const REPLICA_PROSUMER_BUSES: [&str; 5] = ["N3", "N4", "N5", "N7", "N9"];

pub fn replica_network() -> NetworkModel {
    let bus = |id: &str, kind| Bus { id: id.into(), kind };
    let line = |from: &str, to: &str, r_mohm: f64, x_mohm: f64| Line {
        from: from.into(),
        to: to.into(),
        r_ohm: r_mohm / 1e3,
        x_ohm: x_mohm / 1e3,
        b_siemens: 0.0,
    };
    NetworkModel {
        buses: vec![
            bus("N1", BusKind::Slack),
            bus("N3", BusKind::Pq),
            bus("N4", BusKind::Pq),
            bus("N5", BusKind::Pq),
            bus("N6", BusKind::Pq),
            bus("N7", BusKind::Pq),
            bus("N9", BusKind::Pq),
        ],
        lines: vec![
            line("N1", "N3", 585.1, 305.7),
            line("N3", "N4", 194.1, 161.3),
            line("N4", "N5", 216.1, 177.8),
            line("N3", "N6", 200.0, 0.0),
            line("N6", "N7", 597.0, 296.2),
            line("N7", "N9", 194.4, 166.4),
        ],
        base: PerUnitBase { v_base_v: 400.0, s_base_va: 10_000.0 },
        slack_voltage: SlackVoltage::Constant(1.0),
    }
}

/// Voltage band `[0.9, 1.05]` pu; 50 kVA at the slack bus with a tenth of it
/// available as reactive power.
pub fn replica_limits() -> GridLimits {
    GridLimits { v_min: 0.9, v_max: 1.05, q_slack_max: 0.5, s_slack_max: 5.0 }
}

pub fn replica_prosumers() -> Vec<ProsumerSpec> {
    REPLICA_PROSUMER_BUSES
        .iter()
        .map(|b| ProsumerSpec {
            name: b.to_string(),
            bus: b.to_string(),
            bess: Some(BessSpec { s_max_kva: 2.5, capacity_kwh: 2.5, soc_min: 0.1, soc_max: 0.9, soc_init: 0.5 }),
            pv_rated_kw: 5.0,
            load_peak_kw: 2.5,
            power_factor: Some(0.98),
        })
        .collect()
}

/// Calibrated so that the uncoordinated day-ahead plan exceeds 1.05 pu
/// around noon and coordination has to curtail PV at the end of the long
/// lateral, with a short slack voltage rise at 12:30.
pub fn replica_profiles() -> SyntheticProfiles {
    SyntheticProfiles {
        pv_peak_fraction: 1.0,
        slack_v_pu: 1.03,
        disturbances: vec![SlackDisturbance { start_s: 45_000, end_s: 46_200, delta_pu: 0.01 }],
        ..SyntheticProfiles::default()
    }
}

pub fn replica_scenario() -> Scenario {
    let mut s = Scenario {
        name: "replica".into(),
        network: replica_network(),
        limits: replica_limits(),
        prosumers: replica_prosumers(),
        tariff: vec![],
        forecast: vec![],
        realization: vec![],
        slack_forecast: vec![],
        slack_realized: vec![],
        timeline: TimelineConfig { mpc_v_margin_pu: 0.005, ..TimelineConfig::default() },
        admm: AdmmConfig::default(),
    };
    s.apply_synthetic(&replica_profiles());
    s
}

/// Writes the replica as file-based scenarios into `dir`: `scenario.json`
/// reading `tariff.csv` and `series.csv`, and `synthetic.json` regenerating
/// the same series from the profile parameters. Both share `network.json`.
pub fn write_replica_fixture(dir: &Path) -> Result<(), SimError> {
    let io = |p: &Path, e: std::io::Error| SimError::Io(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let sc = replica_scenario();
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text + "\n").map_err(|e| io(&p, e))
    };
    write("network.json", pretty(&sc.network)?)?;
    let file = |profiles| ScenarioFile {
        name: sc.name.clone(),
        network: PathBuf::from("network.json"),
        limits: sc.limits,
        prosumers: sc.prosumers.clone(),
        profiles,
        timeline: sc.timeline,
        admm: sc.admm,
    };
    let files = ProfileSource::Files { tariff: "tariff.csv".into(), series: "series.csv".into() };
    write("scenario.json", pretty(&file(files))?)?;
    write("synthetic.json", pretty(&file(ProfileSource::Synthetic(replica_profiles())))?)?;
    sc.write_series(&dir.join("tariff.csv"), &dir.join("series.csv"))
}

fn pretty<T: serde::Serialize>(v: &T) -> Result<String, SimError> {
    serde_json::to_string_pretty(v).map_err(|e| SimError::Parse(e.to_string()))
}
