//! Brute-force ground truth for tiny instances.
//!
//! Expectations are taken by walking every ordered type profile with its
//! product probability, and best responses are found by grid search with
//! successive refinement. Nothing here shares numerics with the solver beyond
//! the mechanism primitives.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{Strategy, TabularEntry};
use crate::error::{Error, Result};
use crate::mechanism::{
    argmax, payoff, select_probs, softmax_in_place, tally, ProblemSpec, TypeVector, VoteVector,
};
use crate::preferences::{Atom, TypeDistribution};

pub const MAX_ALTERNATIVES: usize = 3;
pub const MAX_SUPPORT: usize = 3;
pub const MAX_AGENTS: usize = 12;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub grid_points_per_axis: usize,
    /// Each round shrinks the grid tenfold around the incumbent.
    pub refinement_rounds: usize,
    pub enumeration_cap: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_points_per_axis: 401,
            refinement_rounds: 3,
            enumeration_cap: 1e7,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points_per_axis < 3 || self.grid_points_per_axis % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid_points_per_axis must be odd and at least 3, got {}",
                self.grid_points_per_axis
            )));
        }
        if !(self.enumeration_cap >= 1.0) {
            return Err(Error::InvalidConfig("enumeration_cap must be positive".into()));
        }
        Ok(())
    }

    /// Spacing of the finest grid.
    pub fn resolution(&self, spec: &ProblemSpec) -> f64 {
        let half_width = spec.vote_box_bound() / 10f64.powi(self.refinement_rounds as i32);
        2.0 * half_width / (self.grid_points_per_axis - 1) as f64
    }
}

fn discrete_atoms(dist: &TypeDistribution) -> Result<&[Atom]> {
    dist.atoms().ok_or_else(|| {
        Error::OracleLimits("the oracle only handles discrete distributions".into())
    })
}

fn check_cap(support: usize, agents: usize, cap: f64) -> Result<()> {
    let needed = (support as f64).powi(agents as i32);
    if needed > cap {
        return Err(Error::CapExceeded { needed, cap });
    }
    Ok(())
}

/// Visits every ordered assignment of `agents` agents to support indices.
fn for_each_profile(support: usize, agents: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; agents];
    loop {
        visit(&idx);
        let mut pos = 0;
        loop {
            if pos == agents {
                return;
            }
            idx[pos] += 1;
            if idx[pos] < support {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn strategy_votes(strategy: &Strategy, atoms: &[Atom], spec: &ProblemSpec) -> Result<Vec<VoteVector>> {
    atoms.iter().map(|a| strategy.votes(&a.values, spec)).collect()
}

/// Exact `E[W | type u, own votes a]` when everyone else plays `strategy`.
pub fn oracle_expected_utility(
    u: &TypeVector,
    own: &VoteVector,
    strategy: &Strategy,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &OracleConfig,
) -> Result<f64> {
    let atoms = discrete_atoms(dist)?;
    let opponents = spec.n - 1;
    check_cap(atoms.len(), opponents, config.enumeration_cap)?;
    let votes = strategy_votes(strategy, atoms, spec)?;
    let mut total = 0.0;
    let mut error = None;
    for_each_profile(atoms.len(), opponents, |idx| {
        if error.is_some() {
            return;
        }
        let prob: f64 = idx.iter().map(|&i| atoms[i].prob).product();
        let others: Vec<VoteVector> = idx.iter().map(|&i| votes[i].clone()).collect();
        match payoff(u, own, &others, spec) {
            Ok(p) => total += prob * p.total,
            Err(e) => error = Some(e),
        }
    });
    match error {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// Opponent profiles collapsed by their vote totals and rebate.
struct Objective {
    atoms: Vec<(f64, Vec<f64>)>,
    expected_rebate: f64,
    c: f64,
}

impl Objective {
    fn new(strategy: &Strategy, spec: &ProblemSpec, atoms: &[Atom], cap: f64) -> Result<Self> {
        let opponents = spec.n - 1;
        check_cap(atoms.len(), opponents, cap)?;
        let votes = strategy_votes(strategy, atoms, spec)?;
        let mut merged: BTreeMap<Vec<u64>, (f64, Vec<f64>)> = BTreeMap::new();
        let mut expected_rebate = 0.0;
        let mut error = None;
        for_each_profile(atoms.len(), opponents, |idx| {
            let prob: f64 = idx.iter().map(|&i| atoms[i].prob).product();
            let others: Vec<VoteVector> = idx.iter().map(|&i| votes[i].clone()).collect();
            match tally(spec.m, &others) {
                Ok(v) => {
                    let paid: f64 = others.iter().map(VoteVector::squared_norm).sum();
                    if opponents > 0 {
                        expected_rebate += prob * spec.c * paid / opponents as f64;
                    }
                    let key = v.iter().map(|x| x.to_bits()).collect();
                    merged.entry(key).or_insert((0.0, v.0)).0 += prob;
                }
                Err(e) => error = Some(e),
            }
        });
        if let Some(e) = error {
            return Err(e);
        }
        Ok(Self {
            atoms: merged.into_values().collect(),
            expected_rebate,
            c: spec.c,
        })
    }

    fn value(&self, u: &[f64], own: &[f64]) -> f64 {
        let mut q = vec![0.0; own.len()];
        let mut choice = 0.0;
        for (w, v) in &self.atoms {
            for ((qk, a), vk) in q.iter_mut().zip(own).zip(v) {
                *qk = a + vk;
            }
            softmax_in_place(&mut q);
            choice += w * q.iter().zip(u).map(|(q, u)| q * u).sum::<f64>();
        }
        let cost: f64 = own.iter().map(|a| a * a).sum::<f64>() * self.c;
        choice - cost + self.expected_rebate
    }
}

/// Maximizes the objective over the vote box by refined grid search.
///
/// The lottery ignores a common shift of all votes while the cost is smallest
/// when votes sum to zero, so the search runs over the zero-sum slice.
fn grid_argmax(u: &[f64], objective: &Objective, spec: &ProblemSpec, config: &OracleConfig) -> Vec<f64> {
    let bound = spec.vote_box_bound();
    let g = config.grid_points_per_axis;
    let dims = spec.m - 1;
    let mut center = vec![0.0; dims];
    let mut half_width = bound;
    let mut best = vec![0.0; spec.m];
    for _round in 0..=config.refinement_rounds {
        let step = 2.0 * half_width / (g - 1) as f64;
        let axis = |d: usize, i: usize| center[d] - half_width + step * i as f64;
        let mut best_value = f64::NEG_INFINITY;
        let mut visit = |free: &[f64]| {
            let last = -free.iter().sum::<f64>();
            if free.iter().chain(std::iter::once(&last)).any(|x| x.abs() > bound) {
                return;
            }
            let mut a = free.to_vec();
            a.push(last);
            let value = objective.value(u, &a);
            if value > best_value {
                best_value = value;
                best = a;
            }
        };
        match dims {
            1 => {
                for i in 0..g {
                    visit(&[axis(0, i)]);
                }
            }
            2 => {
                for i in 0..g {
                    for k in 0..g {
                        visit(&[axis(0, i), axis(1, k)]);
                    }
                }
            }
            _ => unreachable!("alternatives are limited to three"),
        }
        center = best[..dims].to_vec();
        half_width /= 10.0;
    }
    best
}

fn check_limits(spec: &ProblemSpec, dist: &TypeDistribution, need_small_n: bool) -> Result<()> {
    if spec.m > MAX_ALTERNATIVES {
        return Err(Error::OracleLimits(format!(
            "m = {} exceeds {MAX_ALTERNATIVES}",
            spec.m
        )));
    }
    let atoms = discrete_atoms(dist)?;
    if need_small_n {
        if atoms.len() > MAX_SUPPORT {
            return Err(Error::OracleLimits(format!(
                "support size {} exceeds {MAX_SUPPORT}",
                atoms.len()
            )));
        }
        if spec.n > MAX_AGENTS {
            return Err(Error::OracleLimits(format!(
                "n = {} exceeds {MAX_AGENTS}",
                spec.n
            )));
        }
    }
    Ok(())
}

/// Grid-search best response of type `u` when everyone else plays `strategy`.
pub fn oracle_best_response(
    u: &TypeVector,
    strategy: &Strategy,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &OracleConfig,
) -> Result<VoteVector> {
    spec.validate()?;
    config.validate()?;
    check_limits(spec, dist, false)?;
    let objective = Objective::new(strategy, spec, discrete_atoms(dist)?, config.enumeration_cap)?;
    Ok(VoteVector(grid_argmax(u, &objective, spec, config)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEquilibrium {
    pub strategy: Strategy,
    pub iterations: usize,
    pub converged: bool,
    pub cycling: bool,
    /// Finest grid spacing, the oracle's accuracy floor.
    pub resolution: f64,
}

/// Undamped best-response iteration with grid-search best responses, stopped
/// once successive iterates differ by at most one grid step.
pub fn oracle_equilibrium(
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &OracleConfig,
) -> Result<OracleEquilibrium> {
    spec.validate()?;
    config.validate()?;
    dist.validate(spec.m, spec.u_max)?;
    check_limits(spec, dist, true)?;
    let atoms = discrete_atoms(dist)?;
    let resolution = config.resolution(spec);
    let mut strategy = Strategy::zero_tabular(dist)?;
    let mut history: Vec<Strategy> = vec![strategy.clone()];
    for iteration in 1..=MAX_ITERATIONS {
        let objective = Objective::new(&strategy, spec, atoms, config.enumeration_cap)?;
        let next = Strategy::Tabular {
            entries: atoms
                .iter()
                .map(|a| TabularEntry {
                    values: a.values.clone(),
                    votes: VoteVector(grid_argmax(&a.values, &objective, spec, config)),
                })
                .collect(),
        };
        let change = next.distance(&strategy).expect("same shape");
        // within one grid step; a step-sized two-cycle is the grid's own fixed point
        if change <= resolution * (1.0 + 1e-6) {
            return Ok(OracleEquilibrium {
                strategy: next,
                iterations: iteration,
                converged: true,
                cycling: false,
                resolution,
            });
        }
        // the grid search is deterministic, so an exact repeat cycles forever
        let revisits = history[..history.len() - 1].iter().any(|h| *h == next);
        strategy = next;
        if revisits {
            return Ok(OracleEquilibrium {
                strategy,
                iterations: iteration,
                converged: false,
                cycling: true,
                resolution,
            });
        }
        history.push(strategy.clone());
    }
    Ok(OracleEquilibrium {
        strategy,
        iterations: MAX_ITERATIONS,
        converged: false,
        cycling: true,
        resolution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    /// `E[Q_j]` over all type profiles.
    pub expected_q: Vec<f64>,
    /// Mass of profiles whose most likely alternative is the utilitarian optimum.
    pub efficiency_prob: f64,
    /// `E[Q at the utilitarian optimum]`.
    pub expected_q_at_utilitarian: f64,
    pub profiles: f64,
    /// Total enumerated probability.
    pub total_mass: f64,
}

/// Exact outcome statistics over every ordered profile of `n` types.
pub fn oracle_outcome_distribution(
    strategy: &Strategy,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &OracleConfig,
) -> Result<OutcomeDistribution> {
    let atoms = discrete_atoms(dist)?;
    check_cap(atoms.len(), spec.n, config.enumeration_cap)?;
    let votes = strategy_votes(strategy, atoms, spec)?;
    let m = spec.m;
    let mut expected_q = vec![0.0; m];
    let mut efficiency = 0.0;
    let mut at_best = 0.0;
    let mut mass = 0.0;
    let mut error = None;
    for_each_profile(atoms.len(), spec.n, |idx| {
        let prob: f64 = idx.iter().map(|&i| atoms[i].prob).product();
        let profile: Vec<VoteVector> = idx.iter().map(|&i| votes[i].clone()).collect();
        let totals = match tally(m, &profile) {
            Ok(t) => t,
            Err(e) => {
                error = Some(e);
                return;
            }
        };
        let q = select_probs(&totals);
        let mut sums = vec![0.0; m];
        for &i in idx {
            for (s, v) in sums.iter_mut().zip(atoms[i].values.iter()) {
                *s += v;
            }
        }
        let best = argmax(&sums);
        for (e, qk) in expected_q.iter_mut().zip(q.iter()) {
            *e += prob * qk;
        }
        if argmax(&q) == best {
            efficiency += prob;
        }
        at_best += prob * q[best];
        mass += prob;
    });
    if let Some(e) = error {
        return Err(e);
    }
    Ok(OutcomeDistribution {
        expected_q,
        efficiency_prob: efficiency,
        expected_q_at_utilitarian: at_best,
        profiles: (atoms.len() as f64).powi(spec.n as i32),
        total_mass: mass,
    })
}
