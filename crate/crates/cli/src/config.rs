//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qtm_core::diagnostics::DiagnosticsConfig;
use qtm_core::equilibrium::SolverConfig;
use qtm_core::mechanism::ProblemSpec;
use qtm_core::oracle::OracleConfig;
use qtm_core::preferences::{BeliefProfile, TypeDistribution};
use qtm_core::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub trials: usize,
    pub probe_count: usize,
    pub epsilon: Option<f64>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        let d = DiagnosticsConfig::default();
        Self {
            trials: d.trials,
            probe_count: d.probe_count,
            epsilon: d.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub n: Vec<usize>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance_id: String,
    pub problem: ProblemSpec,
    pub distribution: TypeDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beliefs: Option<BeliefProfile>,
    /// `solver.seed` is ignored; every cell derives its own from `seed`.
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Separates the sub-seeds of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum CellRole {
    Solver = 1,
    Diagnostics = 2,
    Beliefs = 3,
}

/// Stable 64-bit hash of `(seed, n, c, role)`.
pub fn cell_seed(seed: u64, n: usize, c: f64, role: CellRole) -> u64 {
    derive_seed(seed, &[n as u64, c.to_bits(), role as u64])
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.problem.validate()?;
        self.solver.validate().context("solver")?;
        self.oracle.validate().context("oracle")?;
        self.distribution
            .validate(self.problem.m, self.problem.u_max)
            .context("distribution")?;
        if let Some(beliefs) = &self.beliefs {
            beliefs
                .validate(self.problem.m, self.problem.u_max)
                .context("beliefs")?;
        }
        if self.diagnostics.trials == 0 {
            bail!("diagnostics.trials must be positive");
        }
        if let Some(sweep) = &self.sweep {
            if sweep.n.is_empty() || sweep.c.is_empty() {
                bail!("sweep lists must be nonempty");
            }
            for &n in &sweep.n {
                self.problem.with_n(n).validate().context("sweep.n")?;
            }
            for &c in &sweep.c {
                self.problem.with_c(c).validate().context("sweep.c")?;
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn solver_for(&self, spec: &ProblemSpec) -> SolverConfig {
        SolverConfig {
            seed: cell_seed(self.seed, spec.n, spec.c, CellRole::Solver),
            ..self.solver.clone()
        }
    }

    pub fn beliefs_solver_for(&self, spec: &ProblemSpec) -> SolverConfig {
        SolverConfig {
            seed: cell_seed(self.seed, spec.n, spec.c, CellRole::Beliefs),
            ..self.solver.clone()
        }
    }

    pub fn diagnostics_for(&self, spec: &ProblemSpec) -> DiagnosticsConfig {
        DiagnosticsConfig {
            trials: self.diagnostics.trials,
            probe_count: self.diagnostics.probe_count,
            epsilon: self.diagnostics.epsilon,
            seed: cell_seed(self.seed, spec.n, spec.c, CellRole::Diagnostics),
        }
    }

    /// The sweep cells sorted by `(n, c)`.
    pub fn cells(&self) -> Vec<ProblemSpec> {
        let Some(sweep) = &self.sweep else {
            return vec![self.problem];
        };
        let mut cells: Vec<ProblemSpec> = sweep
            .n
            .iter()
            .flat_map(|&n| sweep.c.iter().map(move |&c| self.problem.with_n(n).with_c(c)))
            .collect();
        cells.sort_by(|a, b| a.n.cmp(&b.n).then(a.c.total_cmp(&b.c)));
        cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "instance_id": "ex1",
                "problem": {"m": 3, "n": 300, "c": 1.0, "u_max": 3.0},
                "distribution": {"kind": "discrete", "atoms": [
                    {"prob": 0.501, "values": [3, 2, 0]},
                    {"prob": 0.499, "values": [0, 2, 3]}
                ]},
                "seed": 7,
                "output_dir": "out"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let config = example();
        config.validate().unwrap();
        assert_eq!(config.diagnostics.trials, 100_000);
        assert_eq!(config.solver, SolverConfig::default());
        assert_eq!(config.cells().len(), 1);
    }

    #[test]
    fn hash_tracks_content() {
        let a = example();
        let mut b = example();
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"instance_id": "x", "problem": {"m": 2, "n": 2, "c": 1.0},
            "distribution": {"kind": "discrete", "atoms": [{"prob": 1, "values": [1, 0]}]},
            "seed": 1, "output_dir": "o", "colour": 3}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn bad_cost_names_the_field() {
        let mut config = example();
        config.problem.c = 0.0;
        let message = format!("{:#}", config.validate().unwrap_err());
        assert!(message.contains("c"), "{message}");
    }

    #[test]
    fn cells_are_sorted_and_seeds_differ() {
        let mut config = example();
        config.sweep = Some(Sweep {
            n: vec![100, 50],
            c: vec![2.0, 1.0],
        });
        let cells = config.cells();
        let keys: Vec<(usize, f64)> = cells.iter().map(|s| (s.n, s.c)).collect();
        assert_eq!(keys, vec![(50, 1.0), (50, 2.0), (100, 1.0), (100, 2.0)]);
        let seeds: std::collections::BTreeSet<u64> =
            cells.iter().map(|s| config.solver_for(s).seed).collect();
        assert_eq!(seeds.len(), 4);
        assert_eq!(config.solver_for(&cells[0]).seed, config.solver_for(&cells[0]).seed);
        let empty = Sweep { n: vec![], c: vec![1.0] };
        config.sweep = Some(empty);
        assert!(config.validate().is_err());
    }
}
