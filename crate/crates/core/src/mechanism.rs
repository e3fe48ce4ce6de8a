//! Primitives of the Quadratic Transfers Mechanism.
//!
//! Every agent buys a signed number of votes `a_j` for each alternative at a
//! cost of `c * a_j^2`. The vote totals `V_j` are summed over agents and the
//! outcome is drawn from the softmax lottery `Q_k = exp(V_k) / sum_j exp(V_j)`.
//! Each agent's payment is split equally among the other `n - 1` agents, so
//! the mechanism is exactly budget balanced.
//!
//! Everything here is a pure function of its arguments.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

/// A collective-choice instance: `m` alternatives, `n` agents, vote price `c`
/// and value scale `u_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub m: usize,
    pub n: usize,
    pub c: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
}

fn default_u_max() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn new(m: usize, n: usize, c: f64, u_max: f64) -> Result<Self> {
        let spec = Self { m, n, c, u_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidSpec {
                field: "m",
                reason: format!("must be at least 2, got {}", self.m),
            });
        }
        if self.n < 1 {
            return Err(Error::InvalidSpec {
                field: "n",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidSpec {
                field: "c",
                reason: format!("must be positive and finite, got {}", self.c),
            });
        }
        if !(self.u_max > 0.0 && self.u_max.is_finite()) {
            return Err(Error::InvalidSpec {
                field: "u_max",
                reason: format!("must be positive and finite, got {}", self.u_max),
            });
        }
        Ok(())
    }

    /// Half-width of the vote box; see [`vote_box_bound`].
    pub fn vote_box_bound(&self) -> f64 {
        vote_box_bound(self)
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn with_c(self, c: f64) -> Self {
        Self { c, ..self }
    }
}

/// Largest useful vote magnitude per alternative, `sqrt(u_max / c)`.
///
/// Buying more than this many votes costs more than the whole value range,
/// so such votes are dominated.
pub fn vote_box_bound(spec: &ProblemSpec) -> f64 {
    (spec.u_max / spec.c).sqrt()
}

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(m: usize) -> Self {
                Self(vec![0.0; m])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl<const N: usize> From<[f64; N]> for $name {
            fn from(v: [f64; N]) -> Self {
                Self(v.to_vec())
            }
        }
    };
}

real_vector!(
    /// An agent's values for each alternative, in utility units.
    TypeVector
);
real_vector!(
    /// An agent's signed votes for each alternative.
    VoteVector
);
real_vector!(
    /// Column sums of a vote profile.
    VoteTotals
);
real_vector!(
    /// Softmax lottery over alternatives.
    SelectionProbs
);

impl VoteVector {
    /// Errors if any coordinate lies outside `±bound` or the length is not `m`.
    pub fn check_box(&self, m: usize, bound: f64) -> Result<()> {
        check_len(m, self.len())?;
        // tiny slack absorbs rounding at the boundary itself
        let limit = bound * (1.0 + 1e-12);
        for (index, &value) in self.iter().enumerate() {
            if !(value.abs() <= limit) {
                return Err(Error::VoteBox {
                    index,
                    value,
                    bound,
                });
            }
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.iter().map(|a| a * a).sum()
    }
}

/// How the agent's value and costs combine for one realized profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffBreakdown {
    pub choice_value: f64,
    pub own_cost: f64,
    pub rebate: f64,
    pub total: f64,
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Sums a vote profile per alternative. An empty profile yields zeros.
pub fn tally(m: usize, profile: &[VoteVector]) -> Result<VoteTotals> {
    let mut totals = vec![0.0; m];
    for votes in profile {
        check_len(m, votes.len())?;
        for (t, a) in totals.iter_mut().zip(votes.iter()) {
            *t += a;
        }
    }
    Ok(VoteTotals(totals))
}

/// Overwrites `x` with `softmax(x)`, subtracting the maximum first.
#[inline]
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// The outcome lottery for given vote totals.
pub fn select_probs(totals: &VoteTotals) -> SelectionProbs {
    let mut q = totals.0.clone();
    softmax_in_place(&mut q);
    SelectionProbs(q)
}

/// Lottery faced by an agent who casts `own` against opponent totals `v_minus`.
pub fn select_probs_given_own_vote(
    own: &VoteVector,
    v_minus: &VoteTotals,
    spec: &ProblemSpec,
) -> Result<SelectionProbs> {
    own.check_box(spec.m, spec.vote_box_bound())?;
    check_len(spec.m, v_minus.len())?;
    Ok(lottery(own, v_minus))
}

fn lottery(own: &[f64], v_minus: &[f64]) -> SelectionProbs {
    let mut q: Vec<f64> = own.iter().zip(v_minus).map(|(a, v)| a + v).collect();
    softmax_in_place(&mut q);
    SelectionProbs(q)
}

/// Realized utility of an agent of type `u` voting `own` against `others`.
///
/// `others` must hold exactly `n - 1` vote vectors.
pub fn payoff(
    u: &TypeVector,
    own: &VoteVector,
    others: &[VoteVector],
    spec: &ProblemSpec,
) -> Result<PayoffBreakdown> {
    let m = spec.m;
    check_len(m, u.len())?;
    if spec.n == 1 && !others.is_empty() {
        return Err(Error::NoOpponentsExpected(others.len()));
    }
    if others.len() != spec.n - 1 {
        return Err(Error::OpponentCount {
            expected: spec.n - 1,
            found: others.len(),
        });
    }
    let v_minus = tally(m, others)?;
    let q = select_probs_given_own_vote(own, &v_minus, spec)?;
    let choice_value: f64 = q.iter().zip(u.iter()).map(|(q, u)| q * u).sum();
    let own_cost = spec.c * own.squared_norm();
    let rebate = if others.is_empty() {
        0.0
    } else {
        let paid: f64 = others.iter().map(VoteVector::squared_norm).sum();
        spec.c * paid / (spec.n - 1) as f64
    };
    Ok(PayoffBreakdown {
        choice_value,
        own_cost,
        rebate,
        total: choice_value - own_cost + rebate,
    })
}

/// Jacobian of the lottery with respect to the agent's own votes.
///
/// Entry `(j, k)` is `dQ_k / da_j`: `Q_j (1 - Q_j)` on the diagonal and
/// `-Q_j Q_k` off it.
pub fn selection_derivatives(own: &VoteVector, v_minus: &VoteTotals) -> Result<SquareMatrix> {
    check_len(own.len(), v_minus.len())?;
    let q = lottery(own, v_minus);
    let m = q.len();
    let mut jac = SquareMatrix::zeros(m);
    for j in 0..m {
        for k in 0..m {
            let value = if j == k {
                q[j] * (1.0 - q[j])
            } else {
                -q[j] * q[k]
            };
            jac.set(j, k, value);
        }
    }
    Ok(jac)
}

/// Draws an alternative from the lottery by inverse CDF.
pub fn draw_outcome<R: Rng + ?Sized>(q: &SelectionProbs, rng: &mut R) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in q.iter().enumerate() {
        acc += p;
        if x < acc {
            return k;
        }
    }
    // x landed in the rounding gap above the final partial sum
    q.iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(q.len().saturating_sub(1))
}

/// First index attaining the maximum.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}
