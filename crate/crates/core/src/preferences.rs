//! Type distributions, their summaries, and belief profiles.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::TypeVector;

/// Tolerance below which two coordinate means count as tied.
pub const MEAN_TIE_TOLERANCE: f64 = 1e-9;

/// Radius of the neighborhood probed around `t e_j`, as a fraction of `u_max`.
pub const AXIS_NEIGHBORHOOD_FRACTION: f64 = 0.05;

/// One support point of a discrete type distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub prob: f64,
    pub values: TypeVector,
}

/// A per-coordinate law for [`TypeDistribution::IndependentMarginals`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Marginal {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Beta(alpha, beta) stretched onto `[lo, hi]`.
    Beta {
        alpha: f64,
        beta: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default = "one")]
        hi: f64,
    },
    PointMass {
        value: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Marginal {
    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
            Marginal::Beta { alpha, beta, lo, hi } => lo + (hi - lo) * alpha / (alpha + beta),
            Marginal::PointMass { value } => value,
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Uniform { lo, hi } | Marginal::Beta { lo, hi, .. } => (lo, hi),
            Marginal::PointMass { value } => (value, value),
        }
    }

    fn validate(&self, u_max: f64) -> Result<()> {
        let (lo, hi) = self.support();
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= u_max) {
            return Err(Error::InvalidDistribution(format!(
                "marginal support [{lo}, {hi}] must lie inside [0, {u_max}]"
            )));
        }
        if let Marginal::Beta { alpha, beta, .. } = *self {
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "beta shape parameters must be positive, got ({alpha}, {beta})"
                )));
            }
        }
        if let Marginal::Uniform { lo, hi } = *self {
            if lo == hi {
                return Err(Error::InvalidDistribution(
                    "uniform marginal needs lo < hi; use point_mass".into(),
                ));
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Marginal::Beta { alpha, beta, lo, hi } => {
                // shape parameters were validated
                let b = Beta::new(alpha, beta).expect("validated beta parameters");
                lo + (hi - lo) * b.sample(rng)
            }
            Marginal::PointMass { value } => value,
        }
    }
}

/// The common distribution `F` from which agents' types are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TypeDistribution {
    Discrete { atoms: Vec<Atom> },
    IndependentMarginals { marginals: Vec<Marginal> },
}

impl TypeDistribution {
    /// Discrete distribution from `(probability, values)` pairs.
    pub fn discrete<I, V>(atoms: I) -> Self
    where
        I: IntoIterator<Item = (f64, V)>,
        V: Into<TypeVector>,
    {
        TypeDistribution::Discrete {
            atoms: atoms
                .into_iter()
                .map(|(prob, values)| Atom {
                    prob,
                    values: values.into(),
                })
                .collect(),
        }
    }

    /// The two-type instance `(3,2,0)` w.p. `p`, `(0,2,3)` w.p. `1-p`.
    pub fn example_one(p: f64) -> Self {
        Self::discrete([(p, [3.0, 2.0, 0.0]), (1.0 - p, [0.0, 2.0, 3.0])])
    }

    pub fn dim(&self) -> usize {
        match self {
            TypeDistribution::Discrete { atoms } => atoms.first().map_or(0, |a| a.values.len()),
            TypeDistribution::IndependentMarginals { marginals } => marginals.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, TypeDistribution::Discrete { .. })
    }

    pub fn atoms(&self) -> Option<&[Atom]> {
        match self {
            TypeDistribution::Discrete { atoms } => Some(atoms),
            _ => None,
        }
    }

    pub fn validate(&self, m: usize, u_max: f64) -> Result<()> {
        match self {
            TypeDistribution::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidDistribution("no atoms".into()));
                }
                let mut total = 0.0;
                for (i, atom) in atoms.iter().enumerate() {
                    if !(atom.prob > 0.0 && atom.prob.is_finite()) {
                        return Err(Error::InvalidDistribution(format!(
                            "atom {i} has non-positive probability {}",
                            atom.prob
                        )));
                    }
                    if atom.values.len() != m {
                        return Err(Error::DimensionMismatch {
                            expected: m,
                            found: atom.values.len(),
                        });
                    }
                    if let Some(v) = atom.values.iter().find(|v| !(0.0..=u_max).contains(*v)) {
                        return Err(Error::InvalidDistribution(format!(
                            "atom {i} has value {v} outside [0, {u_max}]"
                        )));
                    }
                    total += atom.prob;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidDistribution(format!(
                        "atom probabilities sum to {total}, not 1"
                    )));
                }
            }
            TypeDistribution::IndependentMarginals { marginals } => {
                if marginals.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        found: marginals.len(),
                    });
                }
                for marginal in marginals {
                    marginal.validate(u_max)?;
                }
            }
        }
        Ok(())
    }

    /// Coordinate means, exact for both variants.
    pub fn means(&self) -> Vec<f64> {
        match self {
            TypeDistribution::Discrete { atoms } => {
                let mut mu = vec![0.0; self.dim()];
                for atom in atoms {
                    for (m, v) in mu.iter_mut().zip(atom.values.iter()) {
                        *m += atom.prob * v;
                    }
                }
                mu
            }
            TypeDistribution::IndependentMarginals { marginals } => {
                marginals.iter().map(Marginal::mean).collect()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TypeVector {
        match self {
            TypeDistribution::Discrete { atoms } => {
                atoms[sample_atom_index(atoms, rng)].values.clone()
            }
            TypeDistribution::IndependentMarginals { marginals } => {
                TypeVector(marginals.iter().map(|m| m.sample(rng)).collect())
            }
        }
    }

    /// Relabels alternatives: coordinate `i` of the result is coordinate
    /// `order[i]` of `self`.
    pub fn relabeled(&self, order: &[usize]) -> Self {
        match self {
            TypeDistribution::Discrete { atoms } => TypeDistribution::Discrete {
                atoms: atoms
                    .iter()
                    .map(|a| Atom {
                        prob: a.prob,
                        values: TypeVector(order.iter().map(|&o| a.values[o]).collect()),
                    })
                    .collect(),
            },
            TypeDistribution::IndependentMarginals { marginals } => {
                TypeDistribution::IndependentMarginals {
                    marginals: order.iter().map(|&o| marginals[o]).collect(),
                }
            }
        }
    }
}

pub(crate) fn sample_atom_index<R: Rng + ?Sized>(atoms: &[Atom], rng: &mut R) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, atom) in atoms.iter().enumerate() {
        acc += atom.prob;
        if x < acc {
            return i;
        }
    }
    atoms.len() - 1
}

/// Draws `n` i.i.d. types.
pub fn sample_types<R: Rng + ?Sized>(
    dist: &TypeDistribution,
    n: usize,
    rng: &mut R,
) -> Vec<TypeVector> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Outcome of the neighborhood-of-the-axis check for one alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisCheck {
    pub alternative: usize,
    pub verdict: Verdict,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub means: Vec<f64>,
    /// Smallest gap between consecutive sorted means.
    pub delta: f64,
    /// `sort_permutation[0]` is the alternative with the largest mean.
    pub sort_permutation: Vec<usize>,
    pub assumption1_ok: bool,
    pub assumption2_report: Vec<AxisCheck>,
}

impl DistributionSummary {
    pub fn assumption2_ok(&self) -> bool {
        self.assumption2_report
            .iter()
            .all(|c| c.verdict == Verdict::Pass)
    }

    /// Human-readable list of violated assumptions.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.assumption1_ok {
            out.push(format!(
                "coordinate means are not pairwise distinct (delta = {:e})",
                self.delta
            ));
        }
        for check in &self.assumption2_report {
            if check.verdict == Verdict::Fail {
                out.push(format!(
                    "alternative {}: {}",
                    check.alternative, check.explanation
                ));
            }
        }
        out
    }
}

/// Means, the mean gap, the relabeling order, and the two distributional checks.
pub fn summarize(dist: &TypeDistribution, u_max: f64) -> DistributionSummary {
    let means = dist.means();
    let m = means.len();
    let mut order: Vec<usize> = (0..m).collect();
    // stable, so ties keep their original order
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    let delta = order
        .windows(2)
        .map(|w| means[w[0]] - means[w[1]])
        .fold(f64::INFINITY, f64::min);
    let delta = if delta.is_finite() { delta.max(0.0) } else { 0.0 };
    let mut assumption1_ok = true;
    for j in 0..m {
        for k in (j + 1)..m {
            if (means[j] - means[k]).abs() <= MEAN_TIE_TOLERANCE {
                assumption1_ok = false;
            }
        }
    }
    let assumption2_report = (0..m).map(|j| axis_check(dist, j, u_max)).collect();
    DistributionSummary {
        means,
        delta,
        sort_permutation: order,
        assumption1_ok,
        assumption2_report,
    }
}

fn axis_check(dist: &TypeDistribution, j: usize, u_max: f64) -> AxisCheck {
    let radius = AXIS_NEIGHBORHOOD_FRACTION * u_max;
    match dist {
        TypeDistribution::Discrete { atoms } => {
            // distance from the atom to the segment {t e_j : radius <= t <= u_max}
            let hit = atoms.iter().find(|atom| {
                let off_axis: f64 = atom
                    .values
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, v)| v * v)
                    .sum();
                let short = (radius - atom.values[j]).max(0.0);
                (off_axis + short * short).sqrt() <= radius
            });
            match hit {
                Some(atom) => AxisCheck {
                    alternative: j,
                    verdict: Verdict::Pass,
                    explanation: format!(
                        "support point {:?} lies within {radius:.4} of the axis",
                        atom.values.0
                    ),
                },
                None => AxisCheck {
                    alternative: j,
                    verdict: Verdict::Fail,
                    explanation: format!(
                        "no support point within {radius:.4} of t*e_{j} for any t > 0; \
                         discrete support cannot be verified further"
                    ),
                },
            }
        }
        TypeDistribution::IndependentMarginals { marginals } => {
            let (_, hi) = marginals[j].support();
            let others_reach_zero = marginals
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != j)
                .all(|(_, mk)| mk.support().0 == 0.0);
            if hi > 0.0 && others_reach_zero {
                AxisCheck {
                    alternative: j,
                    verdict: Verdict::Pass,
                    explanation: "marginal supports reach the axis".into(),
                }
            } else {
                AxisCheck {
                    alternative: j,
                    verdict: Verdict::Fail,
                    explanation: if hi <= 0.0 {
                        format!("marginal {j} is concentrated at 0")
                    } else {
                        "some other marginal puts no mass near 0".into()
                    },
                }
            }
        }
    }
}

/// One group of agents sharing a (possibly wrong) belief about `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGroup {
    pub fraction: f64,
    pub distribution: TypeDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefProfile {
    pub groups: Vec<BeliefGroup>,
}

impl BeliefProfile {
    pub fn common(distribution: TypeDistribution) -> Self {
        Self {
            groups: vec![BeliefGroup {
                fraction: 1.0,
                distribution,
            }],
        }
    }

    pub fn validate(&self, m: usize, u_max: f64) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidDistribution("belief profile has no groups".into()));
        }
        let mut total = 0.0;
        for g in &self.groups {
            if !(0.0..=1.0).contains(&g.fraction) {
                return Err(Error::InvalidDistribution(format!(
                    "group fraction {} outside [0, 1]",
                    g.fraction
                )));
            }
            g.distribution.validate(m, u_max)?;
            total += g.fraction;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "group fractions sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Number of agents in each group out of `n`, by largest remainder.
    pub fn group_sizes(&self, n: usize) -> Vec<usize> {
        let raw: Vec<f64> = self.groups.iter().map(|g| g.fraction * n as f64).collect();
        let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut left = n - sizes.iter().sum::<usize>().min(n);
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.total_cmp(&fa)
        });
        for &g in order.iter().cycle().take(raw.len() * 2) {
            if left == 0 {
                break;
            }
            sizes[g] += 1;
            left -= 1;
        }
        sizes
    }
}

/// Derivative of the wealth utility, from a small catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalUtility {
    Linear,
    /// `g(w) = ln w`.
    Log,
    /// `g(w) = w^gamma`.
    Power { gamma: f64 },
}

impl MarginalUtility {
    pub fn at(&self, wealth: f64) -> f64 {
        match *self {
            MarginalUtility::Linear => 1.0,
            MarginalUtility::Log => 1.0 / wealth,
            MarginalUtility::Power { gamma } => gamma * wealth.powf(gamma - 1.0),
        }
    }
}

/// Converts money-denominated values into value types `u / g'(w)`.
///
/// The caller is responsible for widening `u_max` to cover the result.
pub fn risk_adjusted_values(
    u: &TypeVector,
    wealth: f64,
    marginal_utility: MarginalUtility,
) -> Result<TypeVector> {
    let g = marginal_utility.at(wealth);
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::NonPositiveMarginalUtility(g));
    }
    Ok(TypeVector(u.iter().map(|v| v / g).collect()))
}
