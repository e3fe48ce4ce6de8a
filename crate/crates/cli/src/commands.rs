use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qtm_core::diagnostics::{diagnose, DiagnosticsReport};
use qtm_core::equilibrium::{
    build_field, foc_residual, solve_equilibrium, solve_with_beliefs, BeliefOutcome,
    EquilibriumResult,
};
use qtm_core::mechanism::ProblemSpec;
use qtm_core::oracle::{oracle_equilibrium, OracleEquilibrium};
use qtm_core::preferences::summarize;

use crate::config::ExperimentConfig;
use crate::output::{write_csv, write_json, Envelope, ReportRow};

/// How a command ended; maps onto the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success,
    /// Results were written but some solve did not converge or some cell failed.
    Incomplete,
    StrictViolation(Vec<String>),
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Incomplete => 2,
            Outcome::StrictViolation(_) => 3,
        }
    }
}

fn warnings(config: &ExperimentConfig) -> Vec<String> {
    summarize(&config.distribution, config.problem.u_max).warnings()
}

/// Assumption warnings are fatal under `--strict` and printed otherwise.
fn check_assumptions(config: &ExperimentConfig, strict: bool) -> Option<Outcome> {
    let found = warnings(config);
    if found.is_empty() {
        return None;
    }
    if strict {
        return Some(Outcome::StrictViolation(found));
    }
    for w in &found {
        eprintln!("warning: {w}");
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveBody {
    pub warnings: Vec<String>,
    pub equilibrium: EquilibriumResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beliefs: Option<BeliefOutcome>,
}

pub fn solve_cell(config: &ExperimentConfig, spec: &ProblemSpec) -> anyhow::Result<SolveBody> {
    let equilibrium = solve_equilibrium(spec, &config.distribution, &config.solver_for(spec))?;
    let beliefs = match &config.beliefs {
        Some(profile) => Some(solve_with_beliefs(
            spec,
            &config.distribution,
            profile,
            &config.beliefs_solver_for(spec),
            config.diagnostics.trials,
        )?),
        None => None,
    };
    Ok(SolveBody {
        warnings: warnings(config),
        equilibrium,
        beliefs,
    })
}

pub fn diagnose_cell(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    eq: &EquilibriumResult,
) -> anyhow::Result<DiagnosticsReport> {
    Ok(diagnose(
        eq,
        spec,
        &config.distribution,
        &config.solver_for(spec),
        &config.diagnostics_for(spec),
    )?)
}

fn converged(body: &SolveBody) -> bool {
    body.equilibrium.converged
        && body
            .beliefs
            .as_ref()
            .is_none_or(|b| b.groups.iter().all(|g| g.converged))
}

pub fn run_solve(config: &ExperimentConfig, strict: bool) -> anyhow::Result<Outcome> {
    if let Some(outcome) = check_assumptions(config, strict) {
        return Ok(outcome);
    }
    let body = solve_cell(config, &config.problem)?;
    let ok = converged(&body);
    write_json(&config.output_dir.join("result.json"), &Envelope::new(config, body))?;
    Ok(if ok { Outcome::Success } else { Outcome::Incomplete })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub report: DiagnosticsReport,
}

pub fn run_diagnose(
    config: &ExperimentConfig,
    result_path: Option<&Path>,
    strict: bool,
) -> anyhow::Result<Outcome> {
    if let Some(outcome) = check_assumptions(config, strict) {
        return Ok(outcome);
    }
    let path: PathBuf = result_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join("result.json"));
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading result {}", path.display()))?;
    let stored: Envelope<SolveBody> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let expected = config.hash();
    if stored.config_hash != expected {
        bail!(
            "result {} was produced by config {} but the current config hashes to {}",
            path.display(),
            stored.config_hash,
            expected
        );
    }
    let eq = &stored.body.equilibrium;
    let report = diagnose_cell(config, &config.problem, eq)?;
    let row = ReportRow::from_report(&config.instance_id, config.seed, &report);
    write_json(
        &config.output_dir.join("report.json"),
        &Envelope::new(config, ReportBody { report }),
    )?;
    write_csv(&config.output_dir.join("report.csv"), &[row])?;
    Ok(if eq.converged { Outcome::Success } else { Outcome::Incomplete })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub c: f64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<EquilibriumResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beliefs: Option<BeliefOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<DiagnosticsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBody {
    pub cells: Vec<SweepCell>,
}

/// Solves and diagnoses every cell; failures become a status, not an error.
pub fn sweep_cells(config: &ExperimentConfig) -> Vec<(SweepCell, ReportRow)> {
    config
        .cells()
        .par_iter()
        .map(|spec| {
            let run = || -> anyhow::Result<(SolveBody, DiagnosticsReport)> {
                let body = solve_cell(config, spec)?;
                let report = diagnose_cell(config, spec, &body.equilibrium)?;
                Ok((body, report))
            };
            match run() {
                Ok((body, report)) => {
                    let row = ReportRow::from_report(&config.instance_id, config.seed, &report);
                    let cell = SweepCell {
                        n: spec.n,
                        c: spec.c,
                        status: row.status.clone(),
                        equilibrium: Some(body.equilibrium),
                        beliefs: body.beliefs,
                        report: Some(report),
                    };
                    (cell, row)
                }
                Err(e) => {
                    let message = format!("{e:#}");
                    let row = ReportRow::failed(
                        &config.instance_id,
                        config.seed,
                        spec.n,
                        spec.m,
                        spec.c,
                        &message,
                    );
                    let cell = SweepCell {
                        n: spec.n,
                        c: spec.c,
                        status: row.status.clone(),
                        equilibrium: None,
                        beliefs: None,
                        report: None,
                    };
                    (cell, row)
                }
            }
        })
        .collect()
}

pub fn run_sweep(config: &ExperimentConfig, strict: bool) -> anyhow::Result<Outcome> {
    if config.sweep.is_none() {
        bail!("sweep: the config has no sweep section");
    }
    if let Some(outcome) = check_assumptions(config, strict) {
        return Ok(outcome);
    }
    let (cells, rows): (Vec<_>, Vec<_>) = sweep_cells(config).into_iter().unzip();
    let failed = cells.iter().any(|c| c.status.starts_with("error"));
    write_csv(&config.output_dir.join("sweep.csv"), &rows)?;
    write_json(
        &config.output_dir.join("sweep.json"),
        &Envelope::new(config, SweepBody { cells }),
    )?;
    Ok(if failed { Outcome::Incomplete } else { Outcome::Success })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub values: Vec<f64>,
    pub oracle_votes: Vec<f64>,
    pub solver_votes: Vec<f64>,
    pub max_abs: f64,
    /// FOC residual of the oracle votes against the oracle strategy's field.
    pub oracle_foc_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBody {
    pub oracle: OracleEquilibrium,
    pub solver: EquilibriumResult,
    pub discrepancies: Vec<Discrepancy>,
    pub max_discrepancy: f64,
    pub resolution: f64,
}

pub fn oracle_cell(config: &ExperimentConfig) -> anyhow::Result<OracleBody> {
    let spec = &config.problem;
    let dist = &config.distribution;
    let oracle = oracle_equilibrium(spec, dist, &config.oracle)?;
    let solver_config = config.solver_for(spec);
    let solver = solve_equilibrium(spec, dist, &solver_config)?;
    let field = build_field(&oracle.strategy, spec, dist, &solver_config)?;
    let atoms = dist.atoms().expect("oracle accepted the distribution");
    let discrepancies = atoms
        .iter()
        .map(|a| {
            let o = oracle.strategy.votes(&a.values, spec)?;
            let s = solver.strategy.votes(&a.values, spec)?;
            Ok(Discrepancy {
                values: a.values.0.clone(),
                max_abs: o
                    .iter()
                    .zip(s.iter())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max),
                oracle_foc_residual: foc_residual(&a.values, &o, &field, spec),
                oracle_votes: o.0,
                solver_votes: s.0,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(OracleBody {
        max_discrepancy: discrepancies.iter().map(|d| d.max_abs).fold(0.0, f64::max),
        resolution: oracle.resolution,
        oracle,
        solver,
        discrepancies,
    })
}

pub fn run_oracle(config: &ExperimentConfig, strict: bool) -> anyhow::Result<Outcome> {
    if let Some(outcome) = check_assumptions(config, strict) {
        return Ok(outcome);
    }
    let body = oracle_cell(config)?;
    let ok = body.oracle.converged && body.solver.converged;
    write_json(&config.output_dir.join("oracle.json"), &Envelope::new(config, body))?;
    Ok(if ok { Outcome::Success } else { Outcome::Incomplete })
}
