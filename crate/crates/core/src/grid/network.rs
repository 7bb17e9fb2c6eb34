use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GridError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
}

/// Pi-model branch in SI units. `b_siemens` is the total shunt susceptance,
/// split equally between both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
    #[serde(default)]
    pub b_siemens: f64,
}

/// Three-phase power base and line-to-line voltage base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerUnitBase {
    pub v_base_v: f64,
    pub s_base_va: f64,
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self { v_base_v: 400.0, s_base_va: 10_000.0 }
    }
}

impl PerUnitBase {
    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_v * self.v_base_v / self.s_base_va
    }

    pub fn s_base_kva(&self) -> f64 {
        self.s_base_va / 1e3
    }

    pub fn ohm_to_pu(&self, z: f64) -> f64 {
        z / self.z_base_ohm()
    }

    pub fn pu_to_ohm(&self, z: f64) -> f64 {
        z * self.z_base_ohm()
    }

    pub fn siemens_to_pu(&self, y: f64) -> f64 {
        y * self.z_base_ohm()
    }

    pub fn kw_to_pu(&self, p: f64) -> f64 {
        p * 1e3 / self.s_base_va
    }

    pub fn pu_to_kw(&self, p: f64) -> f64 {
        p * self.s_base_va / 1e3
    }
}

/// Slack voltage magnitude in pu, either fixed or given per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlackVoltage {
    Constant(f64),
    Series(Vec<f64>),
}

impl Default for SlackVoltage {
    fn default() -> Self {
        SlackVoltage::Constant(1.0)
    }
}

impl SlackVoltage {
    /// Magnitude at `step`; a series shorter than the horizon holds its last value.
    pub fn at(&self, step: usize) -> f64 {
        match self {
            SlackVoltage::Constant(v) => *v,
            SlackVoltage::Series(s) => s.get(step).or(s.last()).copied().unwrap_or(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub base: PerUnitBase,
    #[serde(default)]
    pub slack_voltage: SlackVoltage,
}

impl NetworkModel {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GridError::Io(format!("{}: {e}", path.display())))?;
        let model: NetworkModel =
            serde_json::from_str(&text).map_err(|e| GridError::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Checks structural invariants: a single slack bus, unique ids, known
    /// endpoints, non-negative resistances and a connected graph.
    pub fn validate(&self) -> Result<(), GridError> {
        let slack_count = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack_count != 1 {
            return Err(GridError::InvalidModel(format!(
                "expected exactly one slack bus, found {slack_count}"
            )));
        }
        let mut index = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if index.insert(b.id.as_str(), i).is_some() {
                return Err(GridError::InvalidModel(format!("duplicate bus id {}", b.id)));
            }
        }
        if !(self.base.v_base_v > 0.0 && self.base.s_base_va > 0.0) {
            return Err(GridError::InvalidModel("per-unit bases must be positive".into()));
        }
        let mut adj = vec![Vec::new(); self.buses.len()];
        for line in &self.lines {
            let f = *index
                .get(line.from.as_str())
                .ok_or_else(|| GridError::UnknownBus(line.from.clone()))?;
            let t = *index
                .get(line.to.as_str())
                .ok_or_else(|| GridError::UnknownBus(line.to.clone()))?;
            if !(line.r_ohm >= 0.0) || !line.x_ohm.is_finite() || !line.b_siemens.is_finite() {
                return Err(GridError::InvalidModel(format!(
                    "line {}-{} has invalid parameters",
                    line.from, line.to
                )));
            }
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(b) = queue.pop_front() {
            for &n in &adj[b] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(GridError::InvalidModel(format!(
                "bus {} is not connected to the slack bus",
                self.buses[i].id
            )));
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated model has a slack bus")
    }

    /// Bus indices of all non-slack buses, in declaration order. This is the
    /// ordering used by operating points and sensitivity matrices.
    pub fn non_slack(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].kind != BusKind::Slack).collect()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Position of a bus within the non-slack ordering.
    pub fn non_slack_position(&self, id: &str) -> Option<usize> {
        let idx = self.bus_index(id)?;
        self.non_slack().iter().position(|&i| i == idx)
    }

    /// Whether the line graph is a tree.
    pub fn is_radial(&self) -> bool {
        self.lines.len() + 1 == self.buses.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bus(id: &str, kind: BusKind) -> Bus {
        Bus { id: id.into(), kind }
    }

    fn line(f: &str, t: &str) -> Line {
        Line { from: f.into(), to: t.into(), r_ohm: 0.1, x_ohm: 0.05, b_siemens: 0.0 }
    }

    #[test]
    fn rejects_two_slack_buses() {
        let m = NetworkModel {
            buses: vec![bus("a", BusKind::Slack), bus("b", BusKind::Slack)],
            lines: vec![line("a", "b")],
            base: PerUnitBase::default(),
            slack_voltage: SlackVoltage::default(),
        };
        assert!(matches!(m.validate(), Err(GridError::InvalidModel(_))));
    }

    #[test]
    fn rejects_disconnected_bus() {
        let m = NetworkModel {
            buses: vec![bus("a", BusKind::Slack), bus("b", BusKind::Pq), bus("c", BusKind::Pq)],
            lines: vec![line("a", "b")],
            base: PerUnitBase::default(),
            slack_voltage: SlackVoltage::default(),
        };
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("not connected"));
    }

    #[test]
    fn accepts_meshed_graph() {
        let m = NetworkModel {
            buses: vec![bus("a", BusKind::Slack), bus("b", BusKind::Pq), bus("c", BusKind::Pq)],
            lines: vec![line("a", "b"), line("b", "c"), line("c", "a")],
            base: PerUnitBase::default(),
            slack_voltage: SlackVoltage::default(),
        };
        m.validate().unwrap();
        assert!(!m.is_radial());
    }

    #[test]
    fn negative_resistance_rejected() {
        let mut l = line("a", "b");
        l.r_ohm = -0.1;
        let m = NetworkModel {
            buses: vec![bus("a", BusKind::Slack), bus("b", BusKind::Pq)],
            lines: vec![l],
            base: PerUnitBase::default(),
            slack_voltage: SlackVoltage::default(),
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn slack_series_holds_last_value() {
        let s = SlackVoltage::Series(vec![1.0, 1.01]);
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(5), 1.01);
    }

    proptest! {
        #[test]
        fn per_unit_round_trip(z in 1e-6f64..1e3, p in -1e3f64..1e3, v in 100.0f64..20e3, s in 1e3f64..1e7) {
            let base = PerUnitBase { v_base_v: v, s_base_va: s };
            let z2 = base.pu_to_ohm(base.ohm_to_pu(z));
            prop_assert!(((z2 - z) / z).abs() <= 1e-12);
            let p2 = base.pu_to_kw(base.kw_to_pu(p));
            prop_assert!((p2 - p).abs() <= 1e-12 * p.abs().max(1e-300));
        }
    }
}
