//! Persisted artifacts. Every file carries the tool version, the resolved
//! config and its hash, and is written to a temporary name then renamed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use qtm_core::diagnostics::DiagnosticsReport;

use crate::config::ExperimentConfig;

pub const TOOL: &str = "qtm";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(config: &ExperimentConfig, body: T) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: config.hash(),
            config: config.clone(),
            body,
        }
    }
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// One row of `report.csv` / `sweep.csv`. The first seventeen columns are
/// fixed; new columns may only be appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub instance_id: String,
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub seed: u64,
    pub converged: Option<bool>,
    pub foc_residual: Option<f64>,
    pub efficiency_prob: Option<f64>,
    pub beta_estimate: Option<f64>,
    pub extremes_freq: Option<f64>,
    pub extremes_bound: Option<f64>,
    pub theta: Option<f64>,
    pub xi: Option<f64>,
    pub welfare_qtm: Option<f64>,
    pub welfare_opt: Option<f64>,
    pub welfare_plurality: Option<f64>,
    pub status: String,
    pub efficiency_se: Option<f64>,
    pub beta_se: Option<f64>,
    pub realized_efficiency_freq: Option<f64>,
    pub plurality_efficiency_prob: Option<f64>,
    pub lemma1_ratio_min: Option<f64>,
    pub lemma1_ratio_max: Option<f64>,
    pub vote_bounds_violation_freq: Option<f64>,
    pub delta_n: Option<f64>,
}

pub fn status_of(converged: bool) -> &'static str {
    if converged {
        "converged"
    } else {
        "not_converged"
    }
}

impl ReportRow {
    pub fn from_report(instance_id: &str, seed: u64, r: &DiagnosticsReport) -> Self {
        Self {
            instance_id: instance_id.into(),
            n: r.n,
            m: r.m,
            c: r.c,
            seed,
            converged: Some(r.converged),
            foc_residual: Some(r.foc_residual),
            efficiency_prob: Some(r.efficiency.efficiency_prob),
            beta_estimate: Some(r.concentration.beta_estimate),
            extremes_freq: Some(r.extremes.extremes_freq),
            extremes_bound: Some(r.extremes.extremes_bound),
            theta: Some(r.theta),
            xi: Some(r.xi),
            welfare_qtm: Some(r.welfare.qtm),
            welfare_opt: Some(r.welfare.optimum),
            welfare_plurality: Some(r.welfare.plurality),
            status: status_of(r.converged).into(),
            efficiency_se: Some(r.efficiency.efficiency_se),
            beta_se: Some(r.concentration.beta_se),
            realized_efficiency_freq: Some(r.efficiency.realized_efficiency_freq),
            plurality_efficiency_prob: Some(r.plurality.efficiency_prob),
            lemma1_ratio_min: Some(r.lemma1.ratio_min),
            lemma1_ratio_max: Some(r.lemma1.ratio_max),
            vote_bounds_violation_freq: r.vote_bounds.as_ref().map(|v| v.violation_freq),
            delta_n: r.vote_bounds.as_ref().map(|v| v.delta_n),
        }
    }

    /// A row for a cell that failed before producing a report.
    pub fn failed(instance_id: &str, seed: u64, n: usize, m: usize, c: f64, message: &str) -> Self {
        Self {
            instance_id: instance_id.into(),
            n,
            m,
            c,
            seed,
            converged: None,
            foc_residual: None,
            efficiency_prob: None,
            beta_estimate: None,
            extremes_freq: None,
            extremes_bound: None,
            theta: None,
            xi: None,
            welfare_qtm: None,
            welfare_opt: None,
            welfare_plurality: None,
            status: format!("error: {message}"),
            efficiency_se: None,
            beta_se: None,
            realized_efficiency_freq: None,
            plurality_efficiency_prob: None,
            lemma1_ratio_min: None,
            lemma1_ratio_max: None,
            vote_bounds_violation_freq: None,
            delta_n: None,
        }
    }
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write_atomic(path, &bytes)
}
