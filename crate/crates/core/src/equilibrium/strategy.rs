use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::mechanism::{ProblemSpec, TypeVector, VoteVector};
use crate::preferences::TypeDistribution;

/// Vote vector assigned to one support type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularEntry {
    pub values: TypeVector,
    pub votes: VoteVector,
}

/// A symmetric pure strategy: the map from an agent's type to her votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", rename_all = "snake_case")]
pub enum Strategy {
    /// One vote vector per support point of a discrete distribution.
    Tabular { entries: Vec<TabularEntry> },
    /// Votes linear in value differences,
    /// `a_j(u) = (1/2c) sum_{k != j} (u_j - u_k) pi[j][k]`.
    LinearPivotality { pi: SquareMatrix },
}

impl Strategy {
    /// Everyone abstains, with one table row per support point.
    pub fn zero_tabular(dist: &TypeDistribution) -> Result<Self> {
        let atoms = dist.atoms().ok_or_else(|| {
            Error::RepresentationMismatch("tabular strategies need a discrete distribution".into())
        })?;
        Ok(Strategy::Tabular {
            entries: atoms
                .iter()
                .map(|a| TabularEntry {
                    values: a.values.clone(),
                    votes: VoteVector::zeros(a.values.len()),
                })
                .collect(),
        })
    }

    pub fn zero_linear(m: usize) -> Self {
        Strategy::LinearPivotality {
            pi: SquareMatrix::zeros(m),
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, Strategy::Tabular { .. })
    }

    /// Votes the strategy prescribes for type `u`.
    pub fn votes(&self, u: &[f64], spec: &ProblemSpec) -> Result<VoteVector> {
        match self {
            Strategy::Tabular { entries } => entries
                .iter()
                .find(|e| e.values.as_ref() as &[f64] == u)
                .map(|e| e.votes.clone())
                .ok_or_else(|| {
                    Error::RepresentationMismatch(format!("type {u:?} is not in the strategy table"))
                }),
            Strategy::LinearPivotality { pi } => Ok(linear_votes(pi, u, spec.c)),
        }
    }

    /// Checks the representation invariants against the vote box.
    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        let bound = spec.vote_box_bound();
        match self {
            Strategy::Tabular { entries } => {
                for e in entries {
                    e.votes.check_box(spec.m, bound)?;
                }
            }
            Strategy::LinearPivotality { pi } => {
                if pi.dim() != spec.m {
                    return Err(Error::DimensionMismatch {
                        expected: spec.m,
                        found: pi.dim(),
                    });
                }
                for j in 0..spec.m {
                    if pi.get(j, j) != 0.0 {
                        return Err(Error::RepresentationMismatch(
                            "pivotality matrix must have a zero diagonal".into(),
                        ));
                    }
                    for k in 0..spec.m {
                        let v = pi.get(j, k);
                        if !(0.0..=1.0).contains(&v) || (v - pi.get(k, j)).abs() > 1e-12 {
                            return Err(Error::RepresentationMismatch(format!(
                                "pivotality entry ({j},{k}) = {v} must be symmetric and in [0, 1]"
                            )));
                        }
                    }
                    // worst case over the value cube
                    let worst = spec.u_max * pi.row(j).iter().sum::<f64>() / (2.0 * spec.c);
                    if worst > bound * (1.0 + 1e-12) {
                        return Err(Error::VoteBox {
                            index: j,
                            value: worst,
                            bound,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest coordinate-wise difference between two strategies of the same shape.
    pub fn distance(&self, other: &Strategy) -> Option<f64> {
        match (self, other) {
            (Strategy::Tabular { entries: a }, Strategy::Tabular { entries: b })
                if a.len() == b.len() =>
            {
                Some(
                    a.iter()
                        .zip(b)
                        .flat_map(|(x, y)| x.votes.iter().zip(y.votes.iter()))
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max),
                )
            }
            (Strategy::LinearPivotality { pi: a }, Strategy::LinearPivotality { pi: b })
                if a.dim() == b.dim() =>
            {
                Some(a.max_abs_diff(b))
            }
            _ => None,
        }
    }

    /// Relabels alternatives: coordinate `i` of the result is coordinate `order[i]`.
    pub fn relabeled(&self, order: &[usize]) -> Self {
        let permute = |v: &[f64]| order.iter().map(|&o| v[o]).collect::<Vec<_>>();
        match self {
            Strategy::Tabular { entries } => Strategy::Tabular {
                entries: entries
                    .iter()
                    .map(|e| TabularEntry {
                        values: TypeVector(permute(&e.values)),
                        votes: VoteVector(permute(&e.votes)),
                    })
                    .collect(),
            },
            Strategy::LinearPivotality { pi } => Strategy::LinearPivotality {
                pi: pi.reindexed(order),
            },
        }
    }
}

/// `a_j = (1/2c) sum_k (u_j - u_k) pi[j][k]`.
pub fn linear_votes(pi: &SquareMatrix, u: &[f64], c: f64) -> VoteVector {
    let m = u.len();
    let mut a = vec![0.0; m];
    for (j, aj) in a.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..m {
            if k != j {
                acc += (u[j] - u[k]) * pi.get(j, k);
            }
        }
        *aj = acc / (2.0 * c);
    }
    VoteVector(a)
}
