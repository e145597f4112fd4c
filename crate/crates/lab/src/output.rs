//! Experiment configs, records and their on-disk form.
//!
//! Every experiment writes `<id>.csv` (one row per trial), `<id>.summary.json`
//! (the record without its table) and `<id>.manifest.json`. The manifest is the
//! only file holding a timestamp, so the first two are byte-identical across
//! runs with the same config and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use hmc_kappa::GeneratorParams;

use crate::error::Result;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "HMC_KAPPA_OUT";
pub const DEFAULT_OUT: &str = "hmc-kappa-out";

/// Inputs of one experiment. Fields an experiment does not use stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub dims: Vec<usize>,
    /// Oversampling ratios S/N.
    pub ratios: Vec<f64>,
    pub targets: Vec<f64>,
    pub generators: Vec<GeneratorParams>,
    /// Trials per grid cell.
    pub trials: usize,
    pub seed: u64,
    /// Experiment-specific scalars.
    pub extra: BTreeMap<String, Value>,
    #[serde(skip)]
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            dims: Vec::new(),
            ratios: Vec::new(),
            targets: Vec::new(),
            generators: Vec::new(),
            trials: 1,
            seed,
            extra: BTreeMap::new(),
            out: PathBuf::from(DEFAULT_OUT),
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(crate::LabError::InvalidConfig(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let Some(d) = self.dims.iter().find(|d| **d == 0) {
            return bad(format!("dimension {d} must be at least 1"));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return bad(format!("ratio {r} must be positive"));
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return bad(format!("acceptance target {t} must lie in (0, 1)"));
        }
        for g in &self.generators {
            g.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (the output path is excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    /// Floats use 17 significant digits so they parse back exactly.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Float values of a column, skipping empty cells.
    pub fn floats(&self, column: &str) -> Vec<f64> {
        let Some(i) = self.columns.iter().position(|c| c == column) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter_map(|r| match r[i] {
                Cell::Float(v) => Some(v),
                Cell::Int(v) => Some(v as f64),
                _ => None,
            })
            .collect()
    }
}

/// A failed trial kept in the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

/// Result of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub summary: BTreeMap<String, Value>,
    pub failures: Vec<TrialFailure>,
    #[serde(skip)]
    pub table: Table,
}

impl ExperimentRecord {
    pub fn new(config: &ExperimentConfig, table: Table) -> Self {
        Self {
            experiment: config.experiment.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            summary: BTreeMap::new(),
            failures: Vec::new(),
            table,
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.summary.get(key).and_then(Value::as_str)
    }
}

/// Run manifest written next to the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub experiment: &'a str,
    pub config: &'a ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub rng: &'static str,
    pub seed_rule: &'static str,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub files: Vec<String>,
    pub created_unix_seconds: u64,
}

pub const SEED_RULE: &str = "trial seed = splitmix64 mix of (seed, trial_index)";

/// Writes the CSV, summary JSON and manifest; returns the written paths.
pub fn write_record(config: &ExperimentConfig, record: &ExperimentRecord) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&config.out)?;
    let id = &config.experiment;
    let csv_path = config.out.join(format!("{id}.csv"));
    record.table.write_csv(&csv_path)?;
    let summary_path = config.out.join(format!("{id}.summary.json"));
    write_json(&summary_path, record)?;
    let manifest_path = write_manifest(config, &[&csv_path, &summary_path])?;
    Ok(vec![csv_path, summary_path, manifest_path])
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_manifest(config: &ExperimentConfig, files: &[&Path]) -> Result<PathBuf> {
    fs::create_dir_all(&config.out)?;
    let mut versions = BTreeMap::new();
    versions.insert("hmc-kappa-lab", env!("CARGO_PKG_VERSION"));
    versions.insert("hmc-kappa", hmc_kappa::VERSION);
    let manifest = Manifest {
        experiment: &config.experiment,
        config,
        config_hash: config.hash(),
        seed: config.seed,
        rng: hmc_kappa::rng::RNG_NAME,
        seed_rule: SEED_RULE,
        versions,
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
        created_unix_seconds: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = config.out.join(format!("{}.manifest.json", config.experiment));
    write_json(&path, &manifest)?;
    Ok(path)
}
