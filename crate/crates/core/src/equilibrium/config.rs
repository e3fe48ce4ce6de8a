use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Strategy;

/// Which strategy representation the solver iterates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Tabular for discrete distributions, linear-pivotality otherwise.
    #[default]
    Auto,
    Tabular,
    LinearPivotality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Step size of the damped fixed-point updates, in `(0, 1]`.
    pub damping: f64,
    /// Inner (best-response) tolerance, vote units.
    pub inner_tol: f64,
    /// Outer tolerance, vote units (tabular) or pivotality units (linear).
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Monte Carlo field size.
    pub n_mc: usize,
    pub seed: u64,
    /// Redraw the Monte Carlo type samples at every outer iteration instead of
    /// reusing one fixed set.
    pub field_refresh: bool,
    pub representation: Representation,
    /// Largest number of opponent count vectors enumerated exactly.
    pub exact_cap: usize,
    /// Probe types used to report the residual of a linear-pivotality strategy.
    pub probe_types: usize,
    /// Times the damping may be halved on oscillation before giving up.
    pub max_halvings: u32,
    /// Optional starting point instead of the zero strategy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Strategy>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            inner_tol: 1e-10,
            outer_tol: 1e-6,
            max_inner: 200,
            max_outer: 500,
            n_mc: 100_000,
            seed: 0,
            field_refresh: false,
            representation: Representation::Auto,
            exact_cap: 1_000_000,
            probe_types: 32,
            max_halvings: 5,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        for (name, tol) in [("inner_tol", self.inner_tol), ("outer_tol", self.outer_tol)] {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {tol}"
                )));
            }
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::InvalidConfig(
                "iteration limits must be positive".into(),
            ));
        }
        if self.n_mc == 0 || self.exact_cap == 0 || self.probe_types == 0 {
            return Err(Error::InvalidConfig(
                "n_mc, exact_cap and probe_types must be positive".into(),
            ));
        }
        Ok(())
    }
}
