//! Report records, JSON emission and CSV writers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{CheckName, RunConfig};
use crate::ensemble::TraceRow;
use crate::error::{HarnessError, Result};

/// Bumped whenever report or CSV columns change.
pub const SCHEMA_VERSION: u32 = 1;

pub const TRAJECTORY_COLUMNS: [&str; 7] = [
    "k",
    "fgap",
    "E",
    "S",
    "M",
    "residual_lemma",
    "residual_decomp",
];
pub const COVERAGE_COLUMNS: [&str; 9] = [
    "beta",
    "rule",
    "R",
    "K",
    "frequency",
    "ci_lo",
    "ci_hi",
    "bound",
    "pass",
];
pub const CONSTANTS_COLUMNS: [&str; 4] = ["name", "value", "lower", "upper"];

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Serializes non-finite floats as `null` and reads `null` back as NaN.
mod lossless_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub params: BTreeMap<String, Value>,
    #[serde(with = "lossless_float")]
    pub estimate: f64,
    pub ci: Option<[f64; 2]>,
    pub bound: Option<f64>,
    pub pass: bool,
}

impl CheckRecord {
    pub fn new(check: impl Into<String>, estimate: f64, pass: bool) -> Self {
        Self {
            check: check.into(),
            params: BTreeMap::new(),
            estimate,
            ci: None,
            bound: None,
            pass,
        }
    }

    pub fn param(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), v.into());
        self
    }

    /// Float parameter; non-finite values become `null`.
    pub fn fparam(self, key: &str, v: f64) -> Self {
        let val = serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number);
        self.param(key, val)
    }

    pub fn ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci = Some([lo, hi]);
        self
    }

    pub fn bound(mut self, b: f64) -> Self {
        self.bound = Some(b);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: CheckName,
    pub pass: bool,
    pub records: Vec<CheckRecord>,
}

impl CheckSummary {
    pub fn from_records(name: CheckName, records: Vec<CheckRecord>) -> Self {
        Self {
            name,
            pass: !records.is_empty() && records.iter().all(|r| r.pass),
            records,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Software {
    pub name: String,
    pub version: String,
}

impl Default for Software {
    fn default() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub trajectories: u64,
    pub steps: u64,
    pub diverged: u64,
    pub steps_simulated: u64,
    #[serde(with = "lossless_float")]
    pub e0: f64,
    #[serde(with = "lossless_float")]
    pub mean_final_gap: f64,
    #[serde(with = "lossless_float")]
    pub max_final_gap: f64,
    #[serde(with = "lossless_float")]
    pub max_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub software: Software,
    pub config: RunConfig,
    pub checks: Vec<CheckSummary>,
    pub ensemble: Option<EnsembleStats>,
    pub pass: bool,
}

impl Report {
    pub fn new(
        config: RunConfig,
        checks: Vec<CheckSummary>,
        ensemble: Option<EnsembleStats>,
    ) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self {
            schema_version: SCHEMA_VERSION,
            software: Software::default(),
            config,
            checks,
            ensemble,
            pass,
        }
    }

    pub fn check(&self, name: CheckName) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Human-readable digest, one line per check.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} ({} v{})\n",
            self.config.name, self.software.name, self.software.version
        );
        if let Some(e) = &self.ensemble {
            out += &format!(
                "ensemble: R={} K={} diverged={} mean final gap={:.3e}\n",
                e.trajectories, e.steps, e.diverged, e.mean_final_gap
            );
        }
        for c in &self.checks {
            let failed = c.records.iter().filter(|r| !r.pass).count();
            out += &format!(
                "{:<16} {}  ({} records, {} failed)\n",
                c.name.as_str(),
                if c.pass { "PASS" } else { "FAIL" },
                c.records.len(),
                failed
            );
            for r in c.records.iter().filter(|r| !r.pass) {
                out += &format!(
                    "    failed: {} estimate={} bound={:?}\n",
                    r.check,
                    fmt_f64(r.estimate),
                    r.bound
                );
            }
        }
        out += if self.pass {
            "overall: PASS\n"
        } else {
            "overall: FAIL\n"
        };
        out
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_trajectory_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            fmt_f64(r.fgap),
            fmt_f64(r.e),
            fmt_f64(r.s),
            fmt_f64(r.m),
            opt(r.residual_lemma),
            opt(r.residual_decomp),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub beta: f64,
    pub rule: String,
    pub r: u64,
    pub k: u64,
    pub frequency: f64,
    pub ci: (f64, f64),
    pub bound: f64,
    pub pass: bool,
}

pub fn write_coverage_csv(path: &Path, rows: &[CoverageRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(COVERAGE_COLUMNS)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.beta),
            r.rule.clone(),
            r.r.to_string(),
            r.k.to_string(),
            fmt_f64(r.frequency),
            fmt_f64(r.ci.0),
            fmt_f64(r.ci.1),
            fmt_f64(r.bound),
            r.pass.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// `(name, value, lower, upper)`.
pub fn write_constants_csv(
    path: &Path,
    rows: &[(String, f64, Option<f64>, Option<f64>)],
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CONSTANTS_COLUMNS)?;
    for (name, v, lo, hi) in rows {
        w.write_record([name.clone(), fmt_f64(*v), opt(*lo), opt(*hi)])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Flushes a writer, mapping the error to the path.
pub fn flush(mut w: impl Write, path: &Path) -> Result<()> {
    w.flush().map_err(|e| HarnessError::io(path, e))
}
