//! Measurements on a solved equilibrium: concentration of the winner, sign
//! pattern of the extreme vote totals, pivotality ratios, efficiency and
//! welfare against sincere plurality.
//!
//! Alternatives are reported in relabeled order, largest mean first; the
//! report carries the permutation back to the input labels.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{build_field, EquilibriumResult, SolverConfig, Strategy};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::mechanism::{argmax, draw_outcome, ProblemSpec, SelectionProbs, TypeVector};
use crate::preferences::{summarize, DistributionSummary, TypeDistribution};
use crate::rng::{stream, StreamRole};
use crate::simulate::simulate;

/// Step of the grid on which the concentration level is searched.
pub const BETA_GRID_STEP: f64 = 1e-3;
/// Points of the winner-concentration CDF, at `x = k / (len - 1)`.
pub const CONCENTRATION_GRID: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub trials: usize,
    pub probe_count: usize,
    /// Slack in the vote-total inequalities; `None` means `delta / 8`.
    pub epsilon: Option<f64>,
    pub seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            probe_count: 64,
            epsilon: None,
            seed: 0,
        }
    }
}

/// One simulated profile, reduced to what the reports need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub types: Vec<TypeVector>,
    pub totals: Vec<f64>,
    pub probs: Vec<f64>,
    pub utilitarian: usize,
}

/// Draws `trials` independent profiles under the equilibrium strategy, in the
/// input labels.
pub fn simulate_profiles(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    trials: usize,
    seed: u64,
) -> Result<Vec<ProfileRecord>> {
    simulate(
        spec,
        dist,
        &[&eq.strategy],
        &vec![0; spec.n],
        trials,
        seed,
        StreamRole::Trial,
        |s, _| ProfileRecord {
            types: s.types.to_vec(),
            totals: s.totals.to_vec(),
            probs: s.probs.to_vec(),
            utilitarian: s.utilitarian,
        },
    )
}

/// Per-trial quantities in relabeled order.
struct Trial {
    q: Vec<f64>,
    totals: Vec<f64>,
    sums: Vec<f64>,
    utilitarian: usize,
    drawn: usize,
}

fn trials(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    order: &[usize],
    config: &DiagnosticsConfig,
) -> Result<Vec<Trial>> {
    simulate(
        spec,
        dist,
        &[&eq.strategy],
        &vec![0; spec.n],
        config.trials,
        config.seed,
        StreamRole::Trial,
        |s, rng| {
            let pick = |x: &[f64]| order.iter().map(|&i| x[i]).collect::<Vec<_>>();
            let q = pick(s.probs);
            let sums = pick(s.value_sums);
            let drawn = draw_outcome(&SelectionProbs(q.clone()), rng);
            Trial {
                utilitarian: argmax(&sums),
                totals: pick(s.totals),
                q,
                sums,
                drawn,
            }
        },
    )
}

fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let t = n as f64;
    let mean = sum / t;
    (mean, ((sq / t - mean * mean).max(0.0) / t).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// Smallest `beta` on the grid with `P(Q_1 <= 1 - beta) <= beta`.
    pub beta_estimate: f64,
    /// Binomial standard error of the exceedance frequency at the estimate.
    pub beta_se: f64,
    /// Empirical CDF of `max_j Q_j` on an even grid over `[0, 1]`.
    pub winner_concentration: Vec<f64>,
    pub mean_max_q: f64,
}

fn concentration(trials: &[Trial]) -> ConcentrationReport {
    let t = trials.len();
    let mut q1: Vec<f64> = trials.iter().map(|r| r.q[0]).collect();
    q1.sort_by(f64::total_cmp);
    let steps = (1.0 / BETA_GRID_STEP).round() as usize;
    let mut beta = 1.0;
    for i in 0..=steps {
        let b = i as f64 * BETA_GRID_STEP;
        let below = q1.partition_point(|&q| q <= 1.0 - b);
        if t == 0 || below as f64 <= b * t as f64 {
            beta = b;
            break;
        }
    }
    let mut max_q: Vec<f64> = trials
        .iter()
        .map(|r| r.q.iter().copied().fold(0.0, f64::max))
        .collect();
    max_q.sort_by(f64::total_cmp);
    let winner_concentration = (0..CONCENTRATION_GRID)
        .map(|k| {
            let x = k as f64 / (CONCENTRATION_GRID - 1) as f64;
            if t == 0 {
                0.0
            } else {
                max_q.partition_point(|&q| q <= x) as f64 / t as f64
            }
        })
        .collect();
    ConcentrationReport {
        beta_estimate: beta,
        beta_se: if t == 0 {
            0.0
        } else {
            (beta * (1.0 - beta) / t as f64).sqrt()
        },
        winner_concentration,
        mean_max_q: mean_se(max_q.iter().copied()).0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremesReport {
    /// Frequency of `V_m < 0 < V_1`.
    pub extremes_freq: f64,
    /// `1 - 2m exp(-delta^2 n / 32)`; vacuous when not positive.
    pub extremes_bound: f64,
    pub mean_v_first: f64,
    pub mean_v_last: f64,
}

pub fn extremes_bound(m: usize, n: usize, delta: f64) -> f64 {
    1.0 - 2.0 * m as f64 * (-delta * delta * n as f64 / 32.0).exp()
}

fn extremes(trials: &[Trial], spec: &ProblemSpec, delta: f64) -> ExtremesReport {
    let last = spec.m - 1;
    let hits = trials
        .iter()
        .filter(|r| r.totals[last] < 0.0 && 0.0 < r.totals[0])
        .count();
    ExtremesReport {
        extremes_freq: if trials.is_empty() {
            0.0
        } else {
            hits as f64 / trials.len() as f64
        },
        extremes_bound: extremes_bound(spec.m, spec.n, delta),
        mean_v_first: mean_se(trials.iter().map(|r| r.totals[0])).0,
        mean_v_last: mean_se(trials.iter().map(|r| r.totals[last])).0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welfare {
    /// Mean realized sum of values; the lottery outcome is averaged over `Q`.
    pub qtm: f64,
    pub optimum: f64,
    pub plurality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Mean selection probability of the realized utilitarian optimum.
    pub efficiency_prob: f64,
    pub efficiency_se: f64,
    /// Frequency with which the drawn alternative was the utilitarian optimum.
    pub realized_efficiency_freq: f64,
    /// Frequency with which each alternative was the utilitarian optimum.
    pub utilitarian_frequency: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub welfare_qtm: f64,
    pub welfare_opt: f64,
}

fn efficiency(trials: &[Trial], m: usize) -> EfficiencyReport {
    let t = trials.len().max(1) as f64;
    let (efficiency_prob, efficiency_se) = mean_se(trials.iter().map(|r| r.q[r.utilitarian]));
    let mut utilitarian_frequency = vec![0.0; m];
    let mut mean_q = vec![0.0; m];
    for r in trials {
        utilitarian_frequency[r.utilitarian] += 1.0;
        for (acc, q) in mean_q.iter_mut().zip(&r.q) {
            *acc += q / t;
        }
    }
    utilitarian_frequency.iter_mut().for_each(|f| *f /= t);
    EfficiencyReport {
        efficiency_prob,
        efficiency_se,
        realized_efficiency_freq: trials.iter().filter(|r| r.drawn == r.utilitarian).count() as f64
            / t,
        utilitarian_frequency,
        mean_q,
        welfare_qtm: mean_se(
            trials
                .iter()
                .map(|r| r.q.iter().zip(&r.sums).map(|(q, s)| q * s).sum::<f64>()),
        )
        .0,
        welfare_opt: mean_se(trials.iter().map(|r| r.sums[r.utilitarian])).0,
    }
}

/// `n max_{j != k} E(Q_j Q_k)`.
pub fn theta(pivotality: &SquareMatrix, n: usize) -> f64 {
    n as f64 * pivotality.max_off_diagonal()
}

/// `n max_{j >= 2} E(Q_1 Q_j)`, with the pivotality matrix in relabeled order.
pub fn xi(pivotality: &SquareMatrix, n: usize) -> f64 {
    let row = pivotality.row(0);
    n as f64 * row[1..].iter().copied().fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluralityReport {
    /// Frequency with which the plurality winner was the utilitarian optimum.
    pub efficiency_prob: f64,
    pub efficiency_se: f64,
    /// Frequency with which each alternative won, in input labels.
    pub win_frequency: Vec<f64>,
    pub welfare: f64,
    pub trials: usize,
}

fn uniform_argmax<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> usize {
    let best = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..x.len()).filter(|&i| x[i] == best).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

/// Sincere plurality: everyone votes for a favorite alternative, the most
/// votes win, and ties at either stage are broken uniformly.
pub fn plurality_baseline(
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    trials: usize,
    seed: u64,
) -> Result<PluralityReport> {
    spec.validate()?;
    dist.validate(spec.m, spec.u_max)?;
    let zero = if dist.is_discrete() {
        Strategy::zero_tabular(dist)?
    } else {
        Strategy::zero_linear(spec.m)
    };
    let m = spec.m;
    let outcomes = simulate(
        spec,
        dist,
        &[&zero],
        &vec![0; spec.n],
        trials,
        seed,
        StreamRole::Plurality,
        |s, rng| {
            let mut counts = vec![0.0; m];
            for u in s.types {
                counts[uniform_argmax(u, rng)] += 1.0;
            }
            let winner = uniform_argmax(&counts, rng);
            let best = s.value_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (winner, s.value_sums[winner] == best, s.value_sums[winner])
        },
    )?;
    let t = trials.max(1) as f64;
    let mut win_frequency = vec![0.0; m];
    for (w, _, _) in &outcomes {
        win_frequency[*w] += 1.0;
    }
    win_frequency.iter_mut().for_each(|f| *f /= t);
    let (efficiency_prob, efficiency_se) =
        mean_se(outcomes.iter().map(|o| if o.1 { 1.0 } else { 0.0 }));
    Ok(PluralityReport {
        efficiency_prob,
        efficiency_se,
        win_frequency,
        welfare: mean_se(outcomes.iter().map(|o| o.2)).0,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub within_band: bool,
    pub probes: usize,
}

/// The analytic band `exp(+-16 b)` where `b` is the vote-box half-width.
pub fn lemma1_band(spec: &ProblemSpec) -> (f64, f64) {
    let b = spec.vote_box_bound();
    ((-16.0 * b).exp(), (16.0 * b).exp())
}

fn lemma1_at(
    probes: &[Vec<f64>],
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    solver: &SolverConfig,
) -> Result<Lemma1Report> {
    let field = build_field(&eq.strategy, spec, dist, solver)?;
    let m = spec.m;
    let ratios: Vec<(f64, f64)> = probes
        .par_iter()
        .map(|a| {
            let r = crate::equilibrium::pair_moments(a, &field);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for j in 0..m {
                for k in 0..m {
                    let denom = eq.pivotality.get(j, k);
                    if j != k && denom > 0.0 {
                        let ratio = r.get(j, k) / denom;
                        lo = lo.min(ratio);
                        hi = hi.max(ratio);
                    }
                }
            }
            (lo, hi)
        })
        .collect();
    let ratio_min = ratios.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let ratio_max = ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let (band_lo, band_hi) = lemma1_band(spec);
    Ok(Lemma1Report {
        ratio_min,
        ratio_max,
        band_lo,
        band_hi,
        within_band: ratios.iter().all(|&(lo, hi)| {
            (lo.is_infinite() || lo >= band_lo) && (hi.is_infinite() || hi <= band_hi)
        }),
        probes: probes.len(),
    })
}

/// Ratios `r_{j,k}(a) / E(Q_j Q_k)` at `probe_count` uniform points of the vote box.
pub fn lemma1_check(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    solver: &SolverConfig,
    config: &DiagnosticsConfig,
) -> Result<Lemma1Report> {
    let b = spec.vote_box_bound();
    let probes: Vec<Vec<f64>> = (0..config.probe_count as u64)
        .map(|i| {
            let mut rng = stream(config.seed, StreamRole::LemmaProbe, i);
            (0..spec.m).map(|_| rng.random_range(-b..=b)).collect()
        })
        .collect();
    lemma1_at(&probes, eq, spec, dist, solver)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteBoundsReport {
    pub epsilon: f64,
    /// Measured `max (1 + delta_n)` spread of `E_i(Q_j Q_k) / E(Q_j Q_k)`.
    pub delta_n: f64,
    pub violation_freq: f64,
    /// `2m exp(-2 n epsilon^2)`.
    pub analytic_cap: f64,
    /// The cap is at least one and says nothing.
    pub vacuous: bool,
}

/// Measured `delta_n`: the smallest `d` with every own-type ratio in
/// `[1 / (1 + d), 1 + d]`.
fn measured_delta(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    solver: &SolverConfig,
    config: &DiagnosticsConfig,
) -> Result<f64> {
    let types: Vec<TypeVector> = match dist.atoms() {
        Some(atoms) => atoms.iter().map(|a| a.values.clone()).collect(),
        None => (0..config.probe_count as u64)
            .map(|i| dist.sample(&mut stream(config.seed, StreamRole::ProbeType, i)))
            .collect(),
    };
    let field = build_field(&eq.strategy, spec, dist, solver)?;
    let m = spec.m;
    let deltas = types
        .par_iter()
        .map(|u| {
            let votes = eq.strategy.votes(u, spec)?;
            let r = crate::equilibrium::pair_moments(&votes, &field);
            let mut d: f64 = 0.0;
            for j in 0..m {
                for k in 0..m {
                    let denom = eq.pivotality.get(j, k);
                    let num = r.get(j, k);
                    if j != k && denom > 0.0 && num > 0.0 {
                        let ratio = num / denom;
                        d = d.max(ratio - 1.0).max(1.0 / ratio - 1.0);
                    }
                }
            }
            Ok(d)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(deltas.into_iter().fold(0.0, f64::max))
}

fn vote_bounds(
    trials: &[Trial],
    spec: &ProblemSpec,
    summary: &DistributionSummary,
    pivotality: &SquareMatrix,
    epsilon: f64,
    delta_n: f64,
) -> VoteBoundsReport {
    let m = spec.m;
    let mu: Vec<f64> = summary
        .sort_permutation
        .iter()
        .map(|&i| summary.means[i])
        .collect();
    let d = summary.delta;
    let (shrink, grow) = (1.0 - 3.0 * delta_n / d, 1.0 + 5.0 * delta_n / d);
    let mut upper = vec![0.0; m];
    let mut lower = vec![0.0; m];
    for j in 0..m {
        for k in 0..m {
            if k == j {
                continue;
            }
            let p = pivotality.get(j, k);
            let hi = (mu[j] - mu[k] + 2.0 * epsilon) * p;
            let lo = (mu[j] - mu[k] - 2.0 * epsilon) * p;
            if k < j {
                upper[j] += shrink * hi;
                lower[j] += grow * lo;
            } else {
                upper[j] += grow * hi;
                lower[j] += shrink * lo;
            }
        }
    }
    let scale = 2.0 * spec.c / spec.n as f64;
    let violations = trials
        .iter()
        .filter(|r| {
            (0..m).any(|j| {
                let lhs = scale * r.totals[j];
                lhs > upper[j] || lhs < lower[j]
            })
        })
        .count();
    let cap = 2.0 * m as f64 * (-2.0 * spec.n as f64 * epsilon * epsilon).exp();
    VoteBoundsReport {
        epsilon,
        delta_n,
        violation_freq: if trials.is_empty() {
            0.0
        } else {
            violations as f64 / trials.len() as f64
        },
        analytic_cap: cap,
        vacuous: cap >= 1.0,
    }
}

fn resolve_epsilon(summary: &DistributionSummary, epsilon: Option<f64>) -> Result<f64> {
    let limit = summary.delta / 4.0;
    let epsilon = epsilon.unwrap_or(summary.delta / 8.0);
    if !(epsilon > 0.0 && epsilon <= limit) {
        return Err(Error::EpsilonOutOfRange { epsilon, limit });
    }
    Ok(epsilon)
}

fn relabeled_pivotality(eq: &EquilibriumResult, order: &[usize]) -> SquareMatrix {
    eq.pivotality.reindexed(order)
}

/// Frequency with which the vote totals break the per-alternative bounds,
/// with `delta_n` measured on the own types.
pub fn vote_bounds_check(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    solver: &SolverConfig,
    config: &DiagnosticsConfig,
) -> Result<VoteBoundsReport> {
    let summary = summarize(dist, spec.u_max);
    let epsilon = resolve_epsilon(&summary, config.epsilon)?;
    let delta_n = measured_delta(eq, spec, dist, solver, config)?;
    let order = &summary.sort_permutation;
    let records = trials(eq, spec, dist, order, config)?;
    Ok(vote_bounds(
        &records,
        spec,
        &summary,
        &relabeled_pivotality(eq, order),
        epsilon,
        delta_n,
    ))
}

pub fn theorem1_check(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &DiagnosticsConfig,
) -> Result<ConcentrationReport> {
    let summary = summarize(dist, spec.u_max);
    Ok(concentration(&trials(eq, spec, dist, &summary.sort_permutation, config)?))
}

pub fn extremes_check(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &DiagnosticsConfig,
) -> Result<ExtremesReport> {
    let summary = summarize(dist, spec.u_max);
    let records = trials(eq, spec, dist, &summary.sort_permutation, config)?;
    Ok(extremes(&records, spec, summary.delta))
}

pub fn efficiency_report(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &DiagnosticsConfig,
) -> Result<EfficiencyReport> {
    let summary = summarize(dist, spec.u_max);
    let records = trials(eq, spec, dist, &summary.sort_permutation, config)?;
    Ok(efficiency(&records, spec.m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub trials: usize,
    pub seed: u64,
    pub converged: bool,
    pub foc_residual: f64,
    /// `sort_permutation[i]` is the input label of relabeled alternative `i`.
    pub sort_permutation: Vec<usize>,
    pub delta: f64,
    pub warnings: Vec<String>,
    pub pivotality_matrix: SquareMatrix,
    pub pivotality_se: SquareMatrix,
    pub theta: f64,
    pub xi: f64,
    pub concentration: ConcentrationReport,
    pub extremes: ExtremesReport,
    pub efficiency: EfficiencyReport,
    pub plurality: PluralityReport,
    pub welfare: Welfare,
    pub lemma1: Lemma1Report,
    /// Absent when the means are tied and no slack is admissible.
    pub vote_bounds: Option<VoteBoundsReport>,
}

/// Every diagnostic on one shared set of simulated profiles.
pub fn diagnose(
    eq: &EquilibriumResult,
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    solver: &SolverConfig,
    config: &DiagnosticsConfig,
) -> Result<DiagnosticsReport> {
    spec.validate()?;
    dist.validate(spec.m, spec.u_max)?;
    eq.strategy.validate(spec)?;
    let summary = summarize(dist, spec.u_max);
    let order = summary.sort_permutation.clone();
    let records = trials(eq, spec, dist, &order, config)?;
    let pivotality = relabeled_pivotality(eq, &order);
    let mut warnings = summary.warnings();
    let vote_bounds = match resolve_epsilon(&summary, config.epsilon) {
        Ok(epsilon) => {
            let delta_n = measured_delta(eq, spec, dist, solver, config)?;
            Some(vote_bounds(&records, spec, &summary, &pivotality, epsilon, delta_n))
        }
        Err(e) if summary.delta <= 0.0 => {
            warnings.push(format!("vote bounds skipped: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let plurality = plurality_baseline(spec, dist, config.trials, config.seed)?;
    let efficiency = efficiency(&records, spec.m);
    Ok(DiagnosticsReport {
        n: spec.n,
        m: spec.m,
        c: spec.c,
        trials: config.trials,
        seed: config.seed,
        converged: eq.converged,
        foc_residual: eq.foc_residual,
        delta: summary.delta,
        theta: theta(&pivotality, spec.n),
        xi: xi(&pivotality, spec.n),
        pivotality_se: eq.pivotality_se.reindexed(&order),
        pivotality_matrix: pivotality,
        concentration: concentration(&records),
        extremes: extremes(&records, spec, summary.delta),
        welfare: Welfare {
            qtm: efficiency.welfare_qtm,
            optimum: efficiency.welfare_opt,
            plurality: plurality.welfare,
        },
        efficiency,
        plurality,
        lemma1: lemma1_check(eq, spec, dist, solver, config)?,
        vote_bounds,
        sort_permutation: order,
        warnings,
    })
}
