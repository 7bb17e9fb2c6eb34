use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::profiles::{generate, SyntheticProfiles};
use super::SimError;
use crate::coordinator::AdmmConfig;
use crate::grid::{BusKind, GridLimits, NetworkModel};
use crate::prosumer::ProsumerSpec;

/// Time grid of the three control layers, in seconds from midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimelineConfig {
    /// Planning step of the day-ahead and intra-day problems.
    pub dt_plan_s: u32,
    /// Intra-day re-coordination cadence.
    pub t1_s: u32,
    /// Real-time control cadence, also the resolution of all input series.
    pub t2_s: u32,
    pub horizon_start_s: u32,
    pub horizon_end_s: u32,
    /// Closed-loop simulation window.
    pub window_start_s: u32,
    pub window_end_s: u32,
    /// Iteration cap of every intra-day coordination.
    pub mpc_budget_iters: usize,
    /// Voltage margin, pu, by which intra-day coordination narrows the band
    /// to absorb forecast errors inside a cycle.
    pub mpc_v_margin_pu: f64,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        Self {
            dt_plan_s: 600,
            t1_s: 600,
            t2_s: 30,
            horizon_start_s: 0,
            horizon_end_s: 86_400,
            window_start_s: 36_000,
            window_end_s: 68_400,
            mpc_budget_iters: 150,
            mpc_v_margin_pu: 0.0,
        }
    }
}

impl TimelineConfig {
    /// Number of planning steps `K` over the horizon.
    pub fn steps(&self) -> usize {
        ((self.horizon_end_s - self.horizon_start_s) / self.dt_plan_s) as usize
    }

    /// Number of samples at the real-time resolution over the horizon.
    pub fn samples(&self) -> usize {
        ((self.horizon_end_s - self.horizon_start_s) / self.t2_s) as usize
    }

    pub fn samples_per_step(&self) -> usize {
        (self.dt_plan_s / self.t2_s) as usize
    }

    pub fn dt_plan_h(&self) -> f64 {
        self.dt_plan_s as f64 / 3600.0
    }

    pub fn t2_h(&self) -> f64 {
        self.t2_s as f64 / 3600.0
    }

    /// Planning step containing time `t_s`.
    pub fn step_at(&self, t_s: u32) -> usize {
        ((t_s - self.horizon_start_s) / self.dt_plan_s) as usize
    }

    /// Real-time sample starting at `t_s`.
    pub fn sample_at(&self, t_s: u32) -> usize {
        ((t_s - self.horizon_start_s) / self.t2_s) as usize
    }

    pub fn sample_time(&self, sample: usize) -> u32 {
        self.horizon_start_s + sample as u32 * self.t2_s
    }

    fn violations(&self, out: &mut Vec<String>) {
        let mut bad = |m: String| out.push(format!("timeline: {m}"));
        if self.t2_s == 0 || self.t1_s == 0 || self.dt_plan_s == 0 {
            bad("all periods must be positive".into());
            return;
        }
        if self.t1_s % self.t2_s != 0 {
            bad(format!("T1 = {} s is not a multiple of T2 = {} s", self.t1_s, self.t2_s));
        }
        if self.dt_plan_s != self.t1_s {
            bad(format!("planning step {} s differs from T1 = {} s", self.dt_plan_s, self.t1_s));
        }
        if self.horizon_end_s <= self.horizon_start_s {
            bad("horizon end must follow its start".into());
        } else if (self.horizon_end_s - self.horizon_start_s) % self.dt_plan_s != 0 {
            bad("horizon length is not a multiple of the planning step".into());
        }
        if self.window_start_s < self.horizon_start_s
            || self.window_end_s > self.horizon_end_s
            || self.window_end_s <= self.window_start_s
        {
            bad(format!(
                "window [{}, {}] s must be a non-empty part of the horizon",
                self.window_start_s, self.window_end_s
            ));
        } else if (self.window_start_s - self.horizon_start_s) % self.t1_s != 0
            || (self.window_end_s - self.horizon_start_s) % self.t1_s != 0
        {
            bad("window bounds must fall on T1 boundaries".into());
        }
        if self.mpc_budget_iters == 0 {
            bad("mpc_budget_iters must be at least 1".into());
        }
        if !(self.mpc_v_margin_pu >= 0.0 && self.mpc_v_margin_pu < 0.05) {
            bad(format!("mpc_v_margin_pu = {} outside [0, 0.05)", self.mpc_v_margin_pu));
        }
    }
}

/// Forecast or realized series of one prosumer at the real-time resolution.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProsumerSeries {
    /// Inflexible active load, kW.
    pub load_p: Vec<f64>,
    /// PV potential, kW.
    pub pv: Vec<f64>,
}

/// Where the input series of a scenario come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSource {
    /// Series files relative to the scenario file.
    Files { tariff: PathBuf, series: PathBuf },
    Synthetic(SyntheticProfiles),
}

/// A scenario file as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// Network file relative to the scenario file.
    pub network: PathBuf,
    pub limits: GridLimits,
    pub prosumers: Vec<ProsumerSpec>,
    pub profiles: ProfileSource,
    #[serde(default)]
    pub timeline: TimelineConfig,
    #[serde(default)]
    pub admm: AdmmConfig,
}

/// A fully loaded scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub network: NetworkModel,
    pub limits: GridLimits,
    pub prosumers: Vec<ProsumerSpec>,
    /// Base tariff per planning step, CHF/kWh.
    pub tariff: Vec<f64>,
    pub forecast: Vec<ProsumerSeries>,
    pub realization: Vec<ProsumerSeries>,
    /// Slack voltage assumed by the planning problems, pu per sample.
    pub slack_forecast: Vec<f64>,
    /// Slack voltage imposed by the upper grid, pu per sample.
    pub slack_realized: Vec<f64>,
    pub timeline: TimelineConfig,
    pub admm: AdmmConfig,
}

const SERIES_TIME: &str = "t_s";
const SLACK_FC: &str = "slack_v_fc";
const SLACK_RT: &str = "slack_v";

fn column(name: &str, field: &str) -> String {
    format!("{name}.{field}")
}

impl Scenario {
    /// Loads a scenario file together with the files it references, then
    /// validates the result.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let file: ScenarioFile =
            serde_json::from_str(&text).map_err(|e| SimError::Parse(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let scenario = Self::from_file(file, dir)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Resolves the references of `file` relative to `dir` without validating.
    pub fn from_file(file: ScenarioFile, dir: &Path) -> Result<Self, SimError> {
        let network = NetworkModel::from_json_file(dir.join(&file.network))?;
        let mut scenario = Scenario {
            name: file.name,
            network,
            limits: file.limits,
            prosumers: file.prosumers,
            tariff: vec![],
            forecast: vec![],
            realization: vec![],
            slack_forecast: vec![],
            slack_realized: vec![],
            timeline: file.timeline,
            admm: file.admm,
        };
        match &file.profiles {
            ProfileSource::Files { tariff, series } => {
                scenario.tariff = read_tariff(&dir.join(tariff))?;
                scenario.read_series(&dir.join(series))?;
            }
            ProfileSource::Synthetic(cfg) => scenario.apply_synthetic(cfg),
        }
        Ok(scenario)
    }

    /// Replaces every series with the output of the synthetic generator.
    pub fn apply_synthetic(&mut self, cfg: &SyntheticProfiles) {
        let g = generate(cfg, &self.prosumers, &self.timeline);
        self.tariff = g.tariff;
        self.forecast = g.forecast;
        self.realization = g.realization;
        self.slack_forecast = g.slack_forecast;
        self.slack_realized = g.slack_realized;
    }

    fn read_series(&mut self, path: &Path) -> Result<(), SimError> {
        let table = read_table(path)?;
        let get = |name: &str| -> Result<Vec<f64>, SimError> {
            table
                .column(name)
                .ok_or_else(|| SimError::Parse(format!("{}: missing column {name}", path.display())))
        };
        self.slack_forecast = get(SLACK_FC)?;
        self.slack_realized = get(SLACK_RT)?;
        self.forecast.clear();
        self.realization.clear();
        for p in &self.prosumers {
            self.forecast.push(ProsumerSeries {
                load_p: get(&column(&p.name, "load_fc"))?,
                pv: get(&column(&p.name, "pv_fc"))?,
            });
            self.realization.push(ProsumerSeries {
                load_p: get(&column(&p.name, "load_rt"))?,
                pv: get(&column(&p.name, "pv_rt"))?,
            });
        }
        Ok(())
    }

    /// Writes the tariff and series files in the layout read by [`Scenario::load`].
    pub fn write_series(&self, tariff_path: &Path, series_path: &Path) -> Result<(), SimError> {
        let tl = &self.timeline;
        let mut tariff = Table::new(vec![SERIES_TIME.into(), "price".into()]);
        for (k, c) in self.tariff.iter().enumerate() {
            tariff.push(vec![(tl.horizon_start_s + k as u32 * tl.dt_plan_s) as f64, *c]);
        }
        tariff.write(tariff_path)?;
        let mut header = vec![SERIES_TIME.to_string(), SLACK_FC.into(), SLACK_RT.into()];
        for p in &self.prosumers {
            for f in ["load_fc", "pv_fc", "load_rt", "pv_rt"] {
                header.push(column(&p.name, f));
            }
        }
        let mut series = Table::new(header);
        for s in 0..self.slack_realized.len() {
            let mut row = vec![tl.sample_time(s) as f64, self.slack_forecast[s], self.slack_realized[s]];
            for (f, r) in self.forecast.iter().zip(&self.realization) {
                row.extend([f.load_p[s], f.pv[s], r.load_p[s], r.pv[s]]);
            }
            series.push(row);
        }
        series.write(series_path)
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), SimError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(SimError::Validation(violations))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.network.validate() {
            out.push(format!("network: {e}"));
        }
        if let Err(e) = self.limits.validate() {
            out.push(format!("limits: {e}"));
        }
        if let Err(e) = self.admm.validate() {
            out.push(format!("admm: {e}"));
        }
        let tl = &self.timeline;
        let before = out.len();
        tl.violations(&mut out);
        let timeline_ok = out.len() == before;

        if self.prosumers.is_empty() {
            out.push("prosumers: at least one prosumer is required".into());
        }
        let mut names = HashSet::new();
        for p in &self.prosumers {
            if !names.insert(p.name.as_str()) {
                out.push(format!("prosumer {}: duplicate name", p.name));
            }
            match self.network.bus_index(&p.bus) {
                None => out.push(format!("prosumer {}: unknown bus {}", p.name, p.bus)),
                Some(i) if self.network.buses[i].kind == BusKind::Slack => {
                    out.push(format!("prosumer {}: attached to the slack bus", p.name))
                }
                _ => {}
            }
            if let Some(b) = &p.bess {
                if let Err(e) = b.validate() {
                    out.push(format!("prosumer {}: bess {e}", p.name));
                }
            }
            if !(p.pv_rated_kw >= 0.0 && p.load_peak_kw >= 0.0) {
                out.push(format!("prosumer {}: ratings must be non-negative", p.name));
            }
            if let Some(pf) = p.power_factor {
                if !(pf > 0.0 && pf <= 1.0) {
                    out.push(format!("prosumer {}: power factor {pf} outside (0, 1]", p.name));
                }
            }
        }

        if timeline_ok {
            if self.tariff.len() != tl.steps() {
                out.push(format!("tariff: {} values for K = {} planning steps", self.tariff.len(), tl.steps()));
            }
            if self.tariff.iter().any(|c| !c.is_finite()) {
                out.push("tariff: non-finite price".into());
            }
            let n = tl.samples();
            let check = |out: &mut Vec<String>, label: String, v: &[f64], positive: bool| {
                if v.len() != n {
                    out.push(format!("{label}: {} samples, expected {n}", v.len()));
                } else if let Some(i) = v.iter().position(|x| !x.is_finite() || (positive && *x < 0.0)) {
                    out.push(format!("{label}: invalid value {} at sample {i}", v[i]));
                }
            };
            check(&mut out, "slack forecast".into(), &self.slack_forecast, true);
            check(&mut out, "slack realization".into(), &self.slack_realized, true);
            for (kind, set) in [("forecast", &self.forecast), ("realization", &self.realization)] {
                if set.len() != self.prosumers.len() {
                    out.push(format!("{kind}: {} series for {} prosumers", set.len(), self.prosumers.len()));
                    continue;
                }
                for (p, s) in self.prosumers.iter().zip(set) {
                    check(&mut out, format!("{kind} {} load", p.name), &s.load_p, false);
                    check(&mut out, format!("{kind} {} pv", p.name), &s.pv, true);
                }
            }
        }
        out
    }

    /// Bus of every prosumer, in prosumer order.
    pub fn attachments(&self) -> Vec<String> {
        self.prosumers.iter().map(|p| p.bus.clone()).collect()
    }

    pub fn prosumer_index(&self, name: &str) -> Option<usize> {
        self.prosumers.iter().position(|p| p.name == name)
    }
}

/// Mean of every block of `factor` consecutive samples.
pub fn aggregate(series: &[f64], factor: usize) -> Vec<f64> {
    series.chunks(factor).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

fn read_tariff(path: &Path) -> Result<Vec<f64>, SimError> {
    read_table(path)?
        .column("price")
        .ok_or_else(|| SimError::Parse(format!("{}: missing column price", path.display())))
}

/// A header plus numeric rows, written with the shortest round-trip float
/// representation so that reading and re-writing is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SimError> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.header).map_err(|e| SimError::Io(e.to_string()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| SimError::Io(e.to_string()))?;
        }
        w.into_inner().map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), SimError> {
        fs::write(path, self.to_bytes()?).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }

    pub fn from_reader(r: impl std::io::Read) -> Result<Self, SimError> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(|e| SimError::Parse(e.to_string()))?.iter().map(String::from).collect();
        let mut table = Table::new(header);
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Parse(format!("row {}: {e}", i + 1)))?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| SimError::Parse(format!("row {}: {f:?}: {e}", i + 1))))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != table.header.len() {
                return Err(SimError::Parse(format!("row {}: {} fields", i + 1, row.len())));
            }
            table.rows.push(row);
        }
        Ok(table)
    }
}

fn read_table(path: &Path) -> Result<Table, SimError> {
    let f = fs::File::open(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    Table::from_reader(f).map_err(|e| match e {
        SimError::Parse(m) => SimError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}
