use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::CliError;
use crate::sim::{hex, Table};

/// One output file, held in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn table(name: &str, t: &Table) -> Result<Self, CliError> {
        Ok(Self { name: name.into(), bytes: t.to_bytes()? })
    }

    pub fn labeled(name: &str, t: &LabeledTable) -> Result<Self, CliError> {
        Ok(Self { name: name.into(), bytes: t.to_bytes()? })
    }

    pub fn json<T: Serialize>(name: &str, v: &T) -> Result<Self, CliError> {
        let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(Self { name: name.into(), bytes: format!("{text}\n").into_bytes() })
    }

    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(&self.bytes))
    }
}

/// Numeric table whose rows carry a text label in the first column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTable {
    pub label: String,
    pub header: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl LabeledTable {
    pub fn new(label: &str, header: &[&str]) -> Self {
        Self { label: label.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, label: &str, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push((label.into(), row));
    }

    pub fn value(&self, label: &str, column: &str) -> Option<f64> {
        let j = self.header.iter().position(|h| h == column)?;
        self.rows.iter().find(|(l, _)| l == label).map(|(_, r)| r[j])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let err = |e: csv::Error| CliError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(std::iter::once(&self.label).chain(&self.header)).map_err(err)?;
        for (label, row) in &self.rows {
            w.write_record(std::iter::once(label.clone()).chain(row.iter().map(|v| v.to_string()))).map_err(err)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn from_reader(r: impl std::io::Read) -> Result<Self, CliError> {
        let parse = |m: String| CliError::Config(m);
        let mut rd = csv::Reader::from_reader(r);
        let mut head = rd.headers().map_err(|e| parse(e.to_string()))?.iter().map(String::from);
        let label = head.next().ok_or_else(|| parse("empty header".into()))?;
        let mut t = Self { label, header: head.collect(), rows: vec![] };
        for rec in rd.records() {
            let rec = rec.map_err(|e| parse(e.to_string()))?;
            let mut it = rec.iter();
            let label = it.next().unwrap_or_default().to_string();
            let row = it
                .map(|f| f.parse::<f64>().map_err(|e| parse(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            t.rows.push((label, row));
        }
        Ok(t)
    }

    /// Aligned plain-text rendering for the terminal.
    pub fn render(&self, decimals: usize) -> String {
        let mut cells = vec![std::iter::once(self.label.clone()).chain(self.header.iter().cloned()).collect::<Vec<_>>()];
        for (l, r) in &self.rows {
            cells.push(std::iter::once(l.clone()).chain(r.iter().map(|v| format!("{v:.decimals$}"))).collect());
        }
        let widths: Vec<usize> =
            (0..cells[0].len()).map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
        cells
            .iter()
            .map(|r| r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  "))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Echo of the resolved configuration plus the digest of every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub scenario_sha256: String,
    /// `false` when a seed was given but the scenario reads its series from
    /// files.
    pub seed_applied: bool,
    pub artifacts: BTreeMap<String, String>,
}

/// Writes the artifacts and the manifest; returns the number of files.
pub(crate) fn write_all(config: &RunConfig, artifacts: &[Artifact], seed_applied: bool) -> Result<usize, CliError> {
    let dir = &config.out;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let stale = dir.join("error.json");
    if stale.exists() {
        std::fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
    }
    for a in artifacts {
        let p = dir.join(&a.name);
        std::fs::write(&p, &a.bytes).map_err(|e| CliError::io(&p, e))?;
    }
    let scenario = std::fs::read(&config.scenario).map_err(|e| CliError::io(&config.scenario, e))?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        scenario_sha256: hex(&Sha256::digest(&scenario)),
        seed_applied,
        artifacts: artifacts.iter().map(|a| (a.name.clone(), a.sha256())).collect(),
    };
    let m = Artifact::json("manifest.json", &manifest)?;
    let p: &Path = &dir.join(&m.name);
    std::fs::write(p, &m.bytes).map_err(|e| CliError::io(p, e))?;
    Ok(artifacts.len() + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_table_lookup_and_rendering() {
        let mut t = LabeledTable::new("prosumer", &["without", "with"]);
        t.push("a", vec![-1.0, -0.75]);
        t.push("total", vec![-1.0, -0.75]);
        assert_eq!(t.value("a", "with"), Some(-0.75));
        assert_eq!(t.value("b", "with"), None);
        assert_eq!(t.value("a", "difference"), None);
        let text = t.render(2);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[2].ends_with("-0.75"));
    }

    #[test]
    fn json_artifacts_end_with_a_newline() {
        let a = Artifact::json("x.json", &[1, 2]).unwrap();
        assert!(a.bytes.ends_with(b"]\n"));
        assert_eq!(a.sha256().len(), 64);
    }
}
