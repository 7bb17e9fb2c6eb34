use sha2::{Digest, Sha256};

use super::scenario::Table;
use super::SimError;
use crate::coordinator::{CoordinationReport, CoordinationStatus, IterationRecord};

/// One real-time step as applied to the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct RtRecord {
    pub t_s: u32,
    /// Voltage magnitude of every bus from the AC oracle, pu.
    pub v: Vec<f64>,
    /// Per prosumer; NaN without a BESS.
    pub soc: Vec<f64>,
    pub pv_potential: Vec<f64>,
    pub pv: Vec<f64>,
    pub p_b: Vec<f64>,
    pub q_b: Vec<f64>,
    /// Realized net demand, kW / kvar.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub p_slack: f64,
    pub q_slack: f64,
}

/// Summary of one intra-day coordination.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub t_s: u32,
    pub start_step: usize,
    pub steps: usize,
    /// `None` when coordination was disabled or the cycle failed.
    pub status: Option<CoordinationStatus>,
    pub iterations: usize,
    pub max_r: f64,
    pub max_s: f64,
    pub rho: f64,
    pub relinearizations: usize,
    pub compensation: f64,
    /// The previous cycle's targets were kept.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceLog {
    pub bus_ids: Vec<String>,
    pub names: Vec<String>,
    pub rt: Vec<RtRecord>,
    pub cycles: Vec<CycleRecord>,
    pub reports: Vec<CoordinationReport>,
    pub events: Vec<String>,
}

impl TraceLog {
    pub fn new(bus_ids: Vec<String>, names: Vec<String>) -> Self {
        Self { bus_ids, names, ..Self::default() }
    }

    /// Appends a record; timestamps must strictly increase.
    pub fn push_rt(&mut self, rec: RtRecord) -> Result<(), SimError> {
        if self.rt.last().is_some_and(|last| last.t_s >= rec.t_s) {
            return Err(SimError::Trace(format!("real-time record at {} s is not after the last one", rec.t_s)));
        }
        self.rt.push(rec);
        Ok(())
    }

    pub fn push_cycle(&mut self, rec: CycleRecord, report: Option<CoordinationReport>) -> Result<(), SimError> {
        if self.cycles.last().is_some_and(|last| last.t_s >= rec.t_s) {
            return Err(SimError::Trace(format!("cycle record at {} s is not after the last one", rec.t_s)));
        }
        self.cycles.push(rec);
        self.reports.extend(report);
        Ok(())
    }

    pub fn rt_table(&self) -> Table {
        let mut header = vec!["t_s".to_string()];
        header.extend(self.bus_ids.iter().map(|b| format!("v.{b}")));
        for field in ["soc", "pv_potential", "pv", "p_b", "q_b", "p", "q"] {
            header.extend(self.names.iter().map(|n| format!("{n}.{field}")));
        }
        header.extend(["p_slack".to_string(), "q_slack".to_string()]);
        let mut t = Table::new(header);
        for r in &self.rt {
            let mut row = vec![r.t_s as f64];
            for part in [&r.v, &r.soc, &r.pv_potential, &r.pv, &r.p_b, &r.q_b, &r.p, &r.q] {
                row.extend_from_slice(part);
            }
            row.extend([r.p_slack, r.q_slack]);
            t.push(row);
        }
        t
    }

    pub fn cycle_table(&self) -> Table {
        let header = [
            "t_s",
            "start_step",
            "steps",
            "status",
            "iterations",
            "max_r",
            "max_s",
            "rho",
            "relinearizations",
            "compensation",
            "reused",
        ];
        let mut t = Table::new(header.iter().map(|s| s.to_string()).collect());
        for c in &self.cycles {
            let status = match c.status {
                Some(CoordinationStatus::Converged) => 1.0,
                Some(CoordinationStatus::Timeout) => 0.0,
                None => -1.0,
            };
            t.push(vec![
                c.t_s as f64,
                c.start_step as f64,
                c.steps as f64,
                status,
                c.iterations as f64,
                c.max_r,
                c.max_s,
                c.rho,
                c.relinearizations as f64,
                c.compensation,
                if c.reused { 1.0 } else { 0.0 },
            ]);
        }
        t
    }

    /// Realized tariff cost per prosumer over the logged steps, CHF, given
    /// the price of every record (CHF/kWh) and the step length in hours.
    pub fn realized_costs(&self, price: impl Fn(u32) -> f64, dt_h: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.names.len()];
        for r in &self.rt {
            let c = price(r.t_s);
            for (o, p) in out.iter_mut().zip(&r.p) {
                *o += c * p * dt_h;
            }
        }
        out
    }

    /// SHA-256 over the emitted real-time and cycle tables, hex encoded.
    pub fn digest(&self) -> Result<String, SimError> {
        let mut h = Sha256::new();
        h.update(self.rt_table().to_bytes()?);
        h.update(self.cycle_table().to_bytes()?);
        Ok(hex(&h.finalize()))
    }

    /// Largest logged voltage and the time it occurred.
    pub fn max_voltage(&self) -> Option<(u32, f64)> {
        self.rt
            .iter()
            .map(|r| (r.t_s, r.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Iteration history of a coordination as a table.
pub fn iteration_table(history: &[IterationRecord]) -> Table {
    let header = ["k", "rho", "max_r", "max_s", "eps_pri", "eps_dual", "r_lin", "relinearized"];
    let mut t = Table::new(header.iter().map(|s| s.to_string()).collect());
    for h in history {
        t.push(vec![
            h.k as f64,
            h.rho,
            h.max_r,
            h.max_s,
            h.eps_pri,
            h.eps_dual,
            h.r_lin,
            if h.relinearized { 1.0 } else { 0.0 },
        ]);
    }
    t
}
