use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mechanism::{draw_outcome, ProblemSpec, SelectionProbs};
use crate::preferences::{BeliefProfile, TypeDistribution};
use crate::rng::StreamRole;
use crate::simulate::simulate;

use super::{solve_equilibrium, EquilibriumResult, SolverConfig};

/// Equilibria of each belief group and what happens when types are really
/// drawn from the true distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefOutcome {
    pub groups: Vec<EquilibriumResult>,
    pub group_sizes: Vec<usize>,
    pub trials: usize,
    /// Mean selection probability of each alternative in the true world.
    pub win_probability: Vec<f64>,
    pub win_probability_se: Vec<f64>,
    /// Frequency with which each alternative was actually drawn.
    pub realized_frequency: Vec<f64>,
    /// Frequency with which each alternative was the utilitarian optimum.
    pub utilitarian_frequency: Vec<f64>,
    /// Mean selection probability of the realized utilitarian optimum.
    pub efficiency_prob: f64,
}

/// Each group best-responds as if its own belief were common knowledge; the
/// resulting strategies are then played by agents whose types come from
/// `true_dist`.
pub fn solve_with_beliefs(
    spec: &ProblemSpec,
    true_dist: &TypeDistribution,
    beliefs: &BeliefProfile,
    config: &SolverConfig,
    trials: usize,
) -> Result<BeliefOutcome> {
    spec.validate()?;
    true_dist.validate(spec.m, spec.u_max)?;
    beliefs.validate(spec.m, spec.u_max)?;
    let groups = beliefs
        .groups
        .iter()
        .map(|g| solve_equilibrium(spec, &g.distribution, config))
        .collect::<Result<Vec<_>>>()?;
    let group_sizes = beliefs.group_sizes(spec.n);
    let group_of: Vec<usize> = group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &size)| std::iter::repeat_n(g, size))
        .collect();
    let strategies: Vec<_> = groups.iter().map(|g| &g.strategy).collect();
    let m = spec.m;
    let samples = simulate(
        spec,
        true_dist,
        &strategies,
        &group_of,
        trials,
        config.seed,
        StreamRole::BeliefTrial,
        |s, rng| {
            let drawn = draw_outcome(&SelectionProbs(s.probs.to_vec()), rng);
            (s.probs.to_vec(), drawn, s.utilitarian)
        },
    )?;
    let t = trials.max(1) as f64;
    let mut win = vec![0.0; m];
    let mut win_sq = vec![0.0; m];
    let mut realized = vec![0.0; m];
    let mut utilitarian = vec![0.0; m];
    let mut efficiency = 0.0;
    for (probs, drawn, best) in &samples {
        for j in 0..m {
            win[j] += probs[j];
            win_sq[j] += probs[j] * probs[j];
        }
        realized[*drawn] += 1.0;
        utilitarian[*best] += 1.0;
        efficiency += probs[*best];
    }
    let win_probability: Vec<f64> = win.iter().map(|w| w / t).collect();
    let win_probability_se = win_probability
        .iter()
        .zip(&win_sq)
        .map(|(mean, sq)| ((sq / t - mean * mean).max(0.0) / t).sqrt())
        .collect();
    Ok(BeliefOutcome {
        groups,
        group_sizes,
        trials,
        win_probability,
        win_probability_se,
        realized_frequency: realized.iter().map(|r| r / t).collect(),
        utilitarian_frequency: utilitarian.iter().map(|r| r / t).collect(),
        efficiency_prob: efficiency / t,
    })
}
