//! The opponent field: the law of the other `n - 1` agents' vote totals.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::mechanism::{check_len, softmax_in_place, ProblemSpec, VoteTotals, VoteVector};
use crate::preferences::{Atom, TypeDistribution};
use crate::rng::{derive_seed, stream, StreamRole};

use super::strategy::linear_votes;
use super::{SolverConfig, Strategy};

/// Atoms per work unit in field reductions. Fixed so that sums are grouped
/// identically whatever the worker count.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    ExactMultinomial,
    MonteCarlo,
}

/// Weighted atoms of opponent vote totals `V^{-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentField {
    kind: FieldKind,
    m: usize,
    weights: Vec<f64>,
    totals: Vec<f64>,
}

impl OpponentField {
    /// A field with a single certain atom.
    pub fn deterministic(totals: VoteTotals) -> Self {
        Self {
            kind: FieldKind::ExactMultinomial,
            m: totals.len(),
            weights: vec![1.0],
            totals: totals.0,
        }
    }

    pub fn from_atoms(kind: FieldKind, m: usize, atoms: &[(f64, VoteTotals)]) -> Result<Self> {
        let mut weights = Vec::with_capacity(atoms.len());
        let mut totals = Vec::with_capacity(atoms.len() * m);
        for (w, v) in atoms {
            check_len(m, v.len())?;
            weights.push(*w);
            totals.extend_from_slice(v);
        }
        Ok(Self {
            kind,
            m,
            weights,
            totals,
        })
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.weights
            .iter()
            .copied()
            .zip(self.totals.chunks(self.m))
    }

    /// Sums `visit(weight, lottery, acc)` over atoms, where `lottery` is the
    /// softmax of `own + V`. Chunk partial sums are added in index order.
    pub(crate) fn reduce<F>(&self, own: &[f64], width: usize, visit: F) -> Vec<f64>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Sync,
    {
        let m = self.m;
        let run_chunk = |(weights, totals): (&[f64], &[f64])| {
            let mut acc = vec![0.0; width];
            let mut q = vec![0.0; m];
            for (w, v) in weights.iter().zip(totals.chunks(m)) {
                for ((qk, ak), vk) in q.iter_mut().zip(own).zip(v) {
                    *qk = ak + vk;
                }
                softmax_in_place(&mut q);
                visit(*w, &q, &mut acc);
            }
            acc
        };
        let partials: Vec<Vec<f64>> = if self.len() > 4 * CHUNK {
            self.weights
                .par_chunks(CHUNK)
                .zip(self.totals.par_chunks(CHUNK * m))
                .map(run_chunk)
                .collect()
        } else {
            self.weights
                .chunks(CHUNK)
                .zip(self.totals.chunks(CHUNK * m))
                .map(run_chunk)
                .collect()
        };
        let mut out = vec![0.0; width];
        for part in partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
        out
    }
}

/// `r_{j,k}(a) = E Q_j(a) Q_k(a)` over the field.
pub fn estimate_rjk(own: &VoteVector, field: &OpponentField, spec: &ProblemSpec) -> Result<SquareMatrix> {
    own.check_box(spec.m, spec.vote_box_bound())?;
    check_len(spec.m, field.m())?;
    Ok(pair_moments(own, field))
}

pub(crate) fn pair_moments(own: &[f64], field: &OpponentField) -> SquareMatrix {
    let m = field.m();
    let sums = field.reduce(own, m * m, |w, q, acc| {
        for j in 0..m {
            let wq = w * q[j];
            for k in j..m {
                acc[j * m + k] += wq * q[k];
            }
        }
    });
    symmetric_from_upper(m, &sums)
}

/// Sample mean and standard error of `Q_j Q_k`; the error is zero for exact fields.
pub fn estimate_rjk_with_se(own: &[f64], field: &OpponentField) -> (SquareMatrix, SquareMatrix) {
    let m = field.m();
    let mm = m * m;
    let sums = field.reduce(own, 2 * mm, |w, q, acc| {
        for j in 0..m {
            for k in j..m {
                let x = q[j] * q[k];
                acc[j * m + k] += w * x;
                acc[mm + j * m + k] += w * x * x;
            }
        }
    });
    let mean = symmetric_from_upper(m, &sums[..mm]);
    let se = match field.kind() {
        FieldKind::ExactMultinomial => SquareMatrix::zeros(m),
        FieldKind::MonteCarlo => {
            let second = symmetric_from_upper(m, &sums[mm..]);
            standard_errors(&mean, &second, field.len())
        }
    };
    (mean, se)
}

pub(crate) fn symmetric_from_upper(m: usize, upper: &[f64]) -> SquareMatrix {
    let mut out = SquareMatrix::zeros(m);
    for j in 0..m {
        for k in j..m {
            let v = upper[j * m + k];
            out.set(j, k, v);
            out.set(k, j, v);
        }
    }
    out
}

pub(crate) fn standard_errors(mean: &SquareMatrix, second: &SquareMatrix, samples: usize) -> SquareMatrix {
    let m = mean.dim();
    let mut se = SquareMatrix::zeros(m);
    if samples < 2 {
        return se;
    }
    let n = samples as f64;
    for j in 0..m {
        for k in 0..m {
            let var = (second.get(j, k) - mean.get(j, k).powi(2)).max(0.0) * n / (n - 1.0);
            se.set(j, k, (var / n).sqrt());
        }
    }
    se
}

/// For each `j`, `sum_k |grad_a r_{j,k}(a)|` (Euclidean norms).
pub fn rjk_gradient_norm_sums(own: &[f64], field: &OpponentField) -> Vec<f64> {
    let m = field.m();
    // d(Q_j Q_k)/da_l = Q_j Q_k (1[j=l] + 1[k=l] - 2 Q_l)
    let grads = field.reduce(own, m * m * m, |w, q, acc| {
        for j in 0..m {
            for k in 0..m {
                let qq = w * q[j] * q[k];
                let base = (j * m + k) * m;
                for l in 0..m {
                    let ind = f64::from(u8::from(j == l)) + f64::from(u8::from(k == l));
                    acc[base + l] += qq * (ind - 2.0 * q[l]);
                }
            }
        }
    });
    (0..m)
        .map(|j| {
            (0..m)
                .map(|k| {
                    let base = (j * m + k) * m;
                    grads[base..base + m].iter().map(|g| g * g).sum::<f64>().sqrt()
                })
                .sum()
        })
        .collect()
}

/// Type statistics of the opponents, fixed across outer iterations so the
/// fixed-point map sees common random numbers.
#[derive(Debug, Clone)]
pub(crate) enum FieldBasis {
    /// Count vectors over the support of a discrete distribution.
    Counts {
        kind: FieldKind,
        atoms: Vec<Atom>,
        weights: Vec<f64>,
        counts: Vec<u32>,
    },
    /// Per-sample sums of opponent types (continuous distributions).
    TypeSums { m: usize, sums: Vec<f64> },
}

/// Number of ways to split `total` opponents among `parts` types.
pub fn composition_count(total: usize, parts: usize) -> f64 {
    // C(total + parts - 1, parts - 1)
    let mut acc = 1.0f64;
    for i in 1..parts {
        acc = acc * (total + i) as f64 / i as f64;
    }
    acc
}

impl FieldBasis {
    pub(crate) fn build(
        spec: &ProblemSpec,
        dist: &TypeDistribution,
        config: &SolverConfig,
        iteration: u64,
    ) -> Result<Self> {
        let opponents = spec.n - 1;
        let seed = if config.field_refresh {
            derive_seed(config.seed, &[iteration])
        } else {
            config.seed
        };
        match dist {
            TypeDistribution::Discrete { atoms } => {
                let s = atoms.len();
                if composition_count(opponents, s) <= config.exact_cap as f64 {
                    let (weights, counts) = enumerate_counts(atoms, opponents);
                    Ok(FieldBasis::Counts {
                        kind: FieldKind::ExactMultinomial,
                        atoms: atoms.clone(),
                        weights,
                        counts,
                    })
                } else {
                    let samples: Vec<Vec<u32>> = (0..config.n_mc as u64)
                        .into_par_iter()
                        .map(|i| {
                            let mut rng = stream(seed, StreamRole::FieldSample, i);
                            sample_counts(atoms, opponents, &mut rng)
                        })
                        .collect();
                    Ok(FieldBasis::Counts {
                        kind: FieldKind::MonteCarlo,
                        atoms: atoms.clone(),
                        weights: vec![1.0 / config.n_mc as f64; config.n_mc],
                        counts: samples.into_iter().flatten().collect(),
                    })
                }
            }
            TypeDistribution::IndependentMarginals { .. } => {
                let m = spec.m;
                let sums: Vec<Vec<f64>> = (0..config.n_mc as u64)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = stream(seed, StreamRole::FieldSample, i);
                        let mut acc = vec![0.0; m];
                        for _ in 0..opponents {
                            let t = dist.sample(&mut rng);
                            for (a, v) in acc.iter_mut().zip(t.iter()) {
                                *a += v;
                            }
                        }
                        acc
                    })
                    .collect();
                Ok(FieldBasis::TypeSums {
                    m,
                    sums: sums.into_iter().flatten().collect(),
                })
            }
        }
    }

    pub(crate) fn kind(&self) -> FieldKind {
        match self {
            FieldBasis::Counts { kind, .. } => *kind,
            FieldBasis::TypeSums { .. } => FieldKind::MonteCarlo,
        }
    }

    /// Vote totals induced by `strategy` on every basis atom.
    pub(crate) fn resolve(&self, strategy: &Strategy, spec: &ProblemSpec) -> Result<OpponentField> {
        let m = spec.m;
        match (self, strategy) {
            (FieldBasis::Counts { kind, atoms, weights, counts }, Strategy::Tabular { .. }) => {
                let votes = atoms
                    .iter()
                    .map(|a| strategy.votes(&a.values, spec))
                    .collect::<Result<Vec<_>>>()?;
                let s = atoms.len();
                let mut totals = vec![0.0; weights.len() * m];
                for (row, count) in totals.chunks_mut(m).zip(counts.chunks(s)) {
                    for (c, v) in count.iter().zip(&votes) {
                        let c = f64::from(*c);
                        for (t, a) in row.iter_mut().zip(v.iter()) {
                            *t += c * a;
                        }
                    }
                }
                Ok(OpponentField {
                    kind: *kind,
                    m,
                    weights: weights.clone(),
                    totals,
                })
            }
            (FieldBasis::Counts { kind, atoms, weights, counts }, Strategy::LinearPivotality { pi }) => {
                let s = atoms.len();
                let mut totals = Vec::with_capacity(weights.len() * m);
                let mut sums = vec![0.0; m];
                for count in counts.chunks(s) {
                    sums.iter_mut().for_each(|x| *x = 0.0);
                    for (c, atom) in count.iter().zip(atoms) {
                        for (x, v) in sums.iter_mut().zip(atom.values.iter()) {
                            *x += f64::from(*c) * v;
                        }
                    }
                    totals.extend(linear_votes(pi, &sums, spec.c).0);
                }
                Ok(OpponentField {
                    kind: *kind,
                    m,
                    weights: weights.clone(),
                    totals,
                })
            }
            (FieldBasis::TypeSums { m: bm, sums }, Strategy::LinearPivotality { pi }) => {
                check_len(m, *bm)?;
                let samples = sums.len() / m;
                let totals = sums
                    .chunks(m)
                    .flat_map(|t| linear_votes(pi, t, spec.c).0)
                    .collect();
                Ok(OpponentField {
                    kind: FieldKind::MonteCarlo,
                    m,
                    weights: vec![1.0 / samples as f64; samples],
                    totals,
                })
            }
            (FieldBasis::TypeSums { .. }, Strategy::Tabular { .. }) => Err(
                Error::RepresentationMismatch("tabular strategy with a continuous distribution".into()),
            ),
        }
    }
}

/// Builds the opponent field induced by `strategy` when types follow `dist`.
///
/// Discrete distributions whose count vectors fit under `exact_cap` are
/// enumerated exactly; everything else is sampled with `n_mc` draws keyed by
/// the master seed.
pub fn build_field(
    strategy: &Strategy,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &SolverConfig,
) -> Result<OpponentField> {
    if strategy.is_tabular() && !dist.is_discrete() {
        return Err(Error::RepresentationMismatch(
            "tabular strategy with a continuous distribution".into(),
        ));
    }
    FieldBasis::build(spec, dist, config, 0)?.resolve(strategy, spec)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// All count vectors summing to `total`, with multinomial probabilities.
fn enumerate_counts(atoms: &[Atom], total: usize) -> (Vec<f64>, Vec<u32>) {
    let s = atoms.len();
    let lnf = ln_factorials(total);
    let ln_p: Vec<f64> = atoms.iter().map(|a| a.prob.ln()).collect();
    let mut log_weights = Vec::new();
    let mut counts = Vec::new();
    let mut current = vec![0u32; s];

    fn recurse(
        slot: usize,
        left: usize,
        current: &mut [u32],
        emit: &mut dyn FnMut(&[u32]),
    ) {
        if slot + 1 == current.len() {
            current[slot] = left as u32;
            emit(current);
            return;
        }
        for k in 0..=left {
            current[slot] = k as u32;
            recurse(slot + 1, left - k, current, emit);
        }
    }

    recurse(0, total, &mut current, &mut |c: &[u32]| {
        let mut lw = lnf[total];
        for (k, lp) in c.iter().zip(&ln_p) {
            lw -= lnf[*k as usize];
            lw += f64::from(*k) * lp;
        }
        log_weights.push(lw);
        counts.extend_from_slice(c);
    });
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    (weights, counts)
}

fn sample_counts<R: rand::Rng + ?Sized>(atoms: &[Atom], total: usize, rng: &mut R) -> Vec<u32> {
    let mut left = total as u64;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(atoms.len());
    for (i, atom) in atoms.iter().enumerate() {
        if i + 1 == atoms.len() || left == 0 {
            out.push(left as u32);
            left = 0;
            continue;
        }
        let p = (atom.prob / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, p).expect("probability in [0,1]").sample(rng);
        out.push(k as u32);
        left -= k;
        mass -= atom.prob;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn example_one_field_is_binomial() {
        let spec = ProblemSpec::new(3, 300, 1.0, 3.0).unwrap();
        let dist = TypeDistribution::example_one(0.501);
        let strategy = Strategy::zero_tabular(&dist).unwrap();
        let field = build_field(&strategy, &spec, &dist, &SolverConfig::default()).unwrap();
        assert_eq!(field.kind(), FieldKind::ExactMultinomial);
        assert_eq!(field.len(), 300);
        assert_abs_diff_eq!(field.total_weight(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn single_atom_field_is_deterministic() {
        let spec = ProblemSpec::new(2, 2, 1.0, 1.0).unwrap();
        let dist = TypeDistribution::discrete([(1.0, [1.0, 0.0])]);
        let strategy = Strategy::Tabular {
            entries: vec![super::super::TabularEntry {
                values: [1.0, 0.0].into(),
                votes: [0.1, -0.1].into(),
            }],
        };
        let field = build_field(&strategy, &spec, &dist, &SolverConfig::default()).unwrap();
        assert_eq!(field.len(), 1);
        let (w, v) = field.atoms().next().unwrap();
        assert_eq!(w, 1.0);
        assert_eq!(v, &[0.1, -0.1]);
    }

    #[test]
    fn continuous_field_has_n_mc_atoms_and_is_reproducible() {
        use crate::preferences::Marginal;
        let spec = ProblemSpec::new(2, 20, 1.0, 1.0).unwrap();
        let dist = TypeDistribution::IndependentMarginals {
            marginals: vec![
                Marginal::Uniform { lo: 0.2, hi: 1.0 },
                Marginal::Uniform { lo: 0.0, hi: 0.6 },
            ],
        };
        let config = SolverConfig {
            n_mc: 500,
            seed: 17,
            ..SolverConfig::default()
        };
        let strategy = Strategy::LinearPivotality {
            pi: SquareMatrix::from_rows(&[vec![0.0, 0.2], vec![0.2, 0.0]]).unwrap(),
        };
        let a = build_field(&strategy, &spec, &dist, &config).unwrap();
        let b = build_field(&strategy, &spec, &dist, &config).unwrap();
        assert_eq!(a.kind(), FieldKind::MonteCarlo);
        assert_eq!(a.len(), 500);
        assert_eq!(a, b);
        assert!(build_field(&Strategy::zero_linear(2), &spec, &dist, &config).is_ok());
        let tab = Strategy::Tabular { entries: vec![] };
        assert!(matches!(
            build_field(&tab, &spec, &dist, &config),
            Err(Error::RepresentationMismatch(_))
        ));
    }

    #[test]
    fn rjk_on_deterministic_field() {
        let spec = ProblemSpec::new(2, 2, 1.0, 1.0).unwrap();
        let field = OpponentField::deterministic([0.1, -0.1].into());
        let r = estimate_rjk(&[0.0, 0.0].into(), &field, &spec).unwrap();
        assert_abs_diff_eq!(r.get(0, 1), 0.24752, epsilon = 1e-5);
        assert_abs_diff_eq!(r.get(1, 0), r.get(0, 1), epsilon = 0.0);
    }

    #[test]
    fn composition_counts() {
        assert_eq!(composition_count(299, 2), 300.0);
        assert_eq!(composition_count(399, 3), 80_200.0);
        assert_eq!(composition_count(5, 1), 1.0);
    }

    #[test]
    fn enumerated_weights_match_binomial() {
        let atoms = vec![
            Atom {
                prob: 0.3,
                values: [1.0, 0.0].into(),
            },
            Atom {
                prob: 0.7,
                values: [0.0, 1.0].into(),
            },
        ];
        let (w, c) = enumerate_counts(&atoms, 4);
        // count of the first type is c[2*i]
        for (i, weight) in w.iter().enumerate() {
            let k = c[2 * i] as i32;
            let binom = [1.0, 4.0, 6.0, 4.0, 1.0][k as usize];
            let expected = binom * 0.3f64.powi(k) * 0.7f64.powi(4 - k);
            assert_abs_diff_eq!(*weight, expected, epsilon = 1e-14);
        }
    }
}
