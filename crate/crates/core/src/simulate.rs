//! Monte Carlo profiles: draw every agent's type, apply the strategies, and
//! tally the lottery. Trial `t` always uses stream `(seed, role, t)`.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::equilibrium::Strategy;
use crate::error::{Error, Result};
use crate::mechanism::{argmax, softmax_in_place, ProblemSpec, TypeVector};
use crate::preferences::{sample_atom_index, TypeDistribution};
use crate::rng::{stream, StreamRole};

/// One simulated profile, borrowed for the duration of a visitor call.
#[derive(Debug)]
pub struct ProfileSample<'a> {
    pub index: u64,
    pub types: &'a [TypeVector],
    pub totals: &'a [f64],
    pub probs: &'a [f64],
    /// Per-alternative sums of realized values.
    pub value_sums: &'a [f64],
    /// Utilitarian optimum (first index on ties).
    pub utilitarian: usize,
}

enum Policy<'a> {
    /// Votes indexed by the atom of the true distribution.
    Table(Vec<Vec<f64>>),
    Linear(&'a crate::matrix::SquareMatrix),
}

impl Policy<'_> {
    fn new<'a>(strategy: &'a Strategy, dist: &TypeDistribution, spec: &ProblemSpec) -> Result<Policy<'a>> {
        match strategy {
            Strategy::Tabular { .. } => {
                let atoms = dist.atoms().ok_or_else(|| {
                    Error::RepresentationMismatch(
                        "tabular strategy cannot act on a continuous distribution".into(),
                    )
                })?;
                let table = atoms
                    .iter()
                    .map(|a| strategy.votes(&a.values, spec).map(|v| v.0))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Policy::Table(table))
            }
            Strategy::LinearPivotality { pi } => Ok(Policy::Linear(pi)),
        }
    }
}

/// Runs `trials` profiles where agent `i` plays `strategies[group_of[i]]`.
///
/// `group_of` must have length `spec.n`. Results are returned in trial order.
pub fn simulate<T, F>(
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    strategies: &[&Strategy],
    group_of: &[usize],
    trials: usize,
    seed: u64,
    role: StreamRole,
    visit: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ProfileSample<'_>, &mut ChaCha8Rng) -> T + Sync,
{
    if group_of.len() != spec.n {
        return Err(Error::DimensionMismatch {
            expected: spec.n,
            found: group_of.len(),
        });
    }
    let policies = strategies
        .iter()
        .map(|s| Policy::new(s, dist, spec))
        .collect::<Result<Vec<_>>>()?;
    let m = spec.m;
    let c = spec.c;
    let out = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(seed, role, t);
            let mut types = Vec::with_capacity(spec.n);
            let mut totals = vec![0.0; m];
            let mut value_sums = vec![0.0; m];
            for &g in group_of {
                let (u, votes) = match (&policies[g], dist) {
                    (Policy::Table(table), TypeDistribution::Discrete { atoms }) => {
                        let idx = sample_atom_index(atoms, &mut rng);
                        (atoms[idx].values.clone(), table[idx].clone())
                    }
                    (Policy::Linear(pi), _) => {
                        let u = dist.sample(&mut rng);
                        let v = crate::equilibrium::linear_votes(pi, &u, c).0;
                        (u, v)
                    }
                    (Policy::Table(_), _) => unreachable!("checked in Policy::new"),
                };
                for j in 0..m {
                    totals[j] += votes[j];
                    value_sums[j] += u[j];
                }
                types.push(u);
            }
            let mut probs = totals.clone();
            softmax_in_place(&mut probs);
            let sample = ProfileSample {
                index: t,
                types: &types,
                totals: &totals,
                probs: &probs,
                value_sums: &value_sums,
                utilitarian: argmax(&value_sums),
            };
            visit(&sample, &mut rng)
        })
        .collect();
    Ok(out)
}
