//! Experiment orchestration: dispatch a validated config to the numerical
//! modules, persist records and tables in a run directory keyed by the
//! config hash, and summarize stored runs as a regime table.
//!
//! Layout of a run directory `<out>/<hash>/`:
//! `config.toml`, `record.json` (latest), `records.jsonl` (append-only log)
//! and the mode's tables (`spectrum.csv`, `counting.csv`, ...).

mod config;
mod modes;

pub use config::{
    CalibrationConfig, EpsRange, ExperimentConfig, FitConfig, FitInputModel, GridConfig, MeshConfig, Mode,
    OutputConfig, ReportConfig, SweepConfig, Tolerances, DEFAULT_K_RANGE, DEFAULT_LEVELS,
};
pub use modes::{
    BracketingLevel, BracketingResults, CertificateResults, EntropyResults, FitResults, ModeResults, ReportResults,
    SpectrumResults,
};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::RegimePrediction;
use crate::error::{Error, Result};

/// Version of the record layout; bumped on incompatible changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub code_version: String,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Calibrated constants and where they came from.
    pub calibrations: Vec<String>,
}

/// Fitted exponent against the predicted table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub predicted: RegimePrediction,
    pub method: String,
    pub fitted_power: Option<f64>,
    pub fitted_log_power: Option<f64>,
    pub tolerance: f64,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Failed { message: String, exit_code: i32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    /// Mode results; on numerical failure whatever was computed.
    pub results: Option<ModeResults>,
    pub partial: Option<serde_json::Value>,
    pub verdict: Option<Verdict>,
    pub provenance: Provenance,
}

impl ExperimentRecord {
    pub fn exit_code(&self) -> i32 {
        match &self.status {
            RunStatus::Ok => 0,
            RunStatus::Failed { exit_code, .. } => *exit_code,
        }
    }
}

/// What `run` produced: the record and where it was written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: ExperimentRecord,
    pub dir: PathBuf,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Output root: the explicit override, the config's `[output] dir`, or `runs`.
pub fn output_root(config: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Validates, runs and persists one experiment.
///
/// Configuration errors return `Err` before anything is written. Numerical
/// failures are persisted as a failed record (exit code 2) holding partial
/// results, and returned as `Ok`.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    config.validate()?;
    let mode = config.mode()?;
    let hash = config.hash();
    let dir = out.join(&hash);
    let started = now();
    let mut calibrations = Vec::new();
    let outcome = modes::execute(mode, config, &dir, &mut calibrations);
    let (status, results, partial) = match outcome {
        Ok(r) => (RunStatus::Ok, Some(r), None),
        Err(Error::Config(e)) => return Err(Error::Config(e)),
        Err(e) => {
            let partial = match &e {
                Error::Numerical { partial, .. } => partial.as_deref().cloned(),
                _ => None,
            };
            (RunStatus::Failed { message: e.to_string(), exit_code: e.exit_code() }, None, partial)
        }
    };
    let verdict = results.as_ref().and_then(|r| r.verdict(config));
    let record = ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        mode,
        config: config.clone(),
        status,
        results,
        partial,
        verdict,
        provenance: Provenance {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            started_unix: started,
            finished_unix: now(),
            calibrations,
        },
    };
    persist(&record, &dir)?;
    Ok(RunOutcome { record, dir })
}

fn persist(record: &ExperimentRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), record.config.to_toml())?;
    fs::write(dir.join("record.json"), serde_json::to_string_pretty(record)?)?;
    let mut log = OpenOptions::new().create(true).append(true).open(dir.join("records.jsonl"))?;
    writeln!(log, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub config_hash: String,
    pub params: crate::geometry::EmbeddingParams,
    pub status: RunStatus,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub template_hash: String,
    /// Sorted by config hash, independent of execution order.
    pub entries: Vec<SweepEntry>,
}

/// Runs every grid point (concurrently) and writes `sweep-<hash>.json`.
/// Failures are recorded per point; config errors at any point abort the
/// sweep before anything runs.
pub fn sweep(template: &ExperimentConfig, out: &Path) -> Result<SweepSummary> {
    let points = template.expand_sweep()?;
    for p in &points {
        p.validate()?;
    }
    let mut entries: Vec<SweepEntry> = points
        .par_iter()
        .map(|c| -> Result<SweepEntry> {
            let o = run(c, out)?;
            Ok(SweepEntry {
                config_hash: o.record.config_hash,
                params: c.params,
                status: o.record.status,
                verdict: o.record.verdict,
            })
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.config_hash.cmp(&b.config_hash));
    entries.dedup_by(|a, b| a.config_hash == b.config_hash);
    let summary = SweepSummary { template_hash: template.hash(), entries };
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("sweep-{}.json", summary.template_hash)), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Latest record of every run directory under `root`, sorted by hash.
pub fn load_records(root: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(root)
        .map_err(|e| Error::config("report.source", format!("cannot read {}: {e}", root.display())))?;
    for entry in entries {
        let path = entry?.path().join("record.json");
        if path.is_file() {
            let text = fs::read_to_string(&path)?;
            out.push(serde_json::from_str::<ExperimentRecord>(&text)?);
        }
    }
    out.sort_by(|a, b| a.config_hash.cmp(&b.config_hash));
    Ok(out)
}

#[cfg(test)]
mod tests;
