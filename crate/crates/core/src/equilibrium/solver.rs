//! Best responses from the first-order conditions and the outer fixed point
//! over symmetric strategies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::mechanism::{check_len, softmax_in_place, ProblemSpec, TypeVector, VoteVector};
use crate::preferences::TypeDistribution;
use crate::rng::{stream, StreamRole};

use super::field::{
    pair_moments, rjk_gradient_norm_sums, standard_errors, symmetric_from_upper, FieldBasis,
    FieldKind, OpponentField,
};
use super::strategy::linear_votes;
use super::{Representation, SolverConfig, Strategy, TabularEntry};

/// What the reported residual measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    /// Max FOC residual over every support type of a tabular strategy.
    Exact,
    /// Max FOC residual of the linear-pivotality votes at probe types; this is
    /// the approximation error of the linear form, not a solver tolerance.
    LinearApproximation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub strategy: Strategy,
    /// Unconditional `E(Q_j Q_k)`.
    pub pivotality: SquareMatrix,
    pub pivotality_se: SquareMatrix,
    /// Max-norm FOC residual in vote units, against a freshly built field.
    pub foc_residual: f64,
    pub foc_threshold: f64,
    pub residual_kind: ResidualKind,
    pub outer_iterations: usize,
    pub converged: bool,
    pub field_kind: FieldKind,
    pub field_atoms: usize,
    /// `min over evaluated types of (2c/m - max_j sum_k |grad r_{j,k}|)`;
    /// positive means the best-response map is a contraction there.
    pub contraction_margin: f64,
    /// Measured `max |E_i(Q_j Q_k) / E(Q_j Q_k) - 1|` over evaluated types.
    pub delta_n: f64,
    /// Damping in force when the solver stopped.
    pub damping: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Halves the step size when successive updates flip direction without
/// shrinking.
struct Damper {
    lambda: f64,
    halvings: u32,
    max_halvings: u32,
    prev: Option<(Vec<f64>, f64)>,
}

impl Damper {
    fn new(lambda: f64, max_halvings: u32) -> Self {
        Self {
            lambda,
            halvings: 0,
            max_halvings,
            prev: None,
        }
    }

    /// Returns the step size to use, or `None` once the halving budget is spent.
    fn observe(&mut self, step: &[f64]) -> Option<f64> {
        let norm = step.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        if let Some((prev, prev_norm)) = &self.prev {
            let dot: f64 = prev.iter().zip(step).map(|(a, b)| a * b).sum();
            if dot < 0.0 && norm > 0.5 * prev_norm {
                if self.halvings == self.max_halvings {
                    return None;
                }
                self.halvings += 1;
                self.lambda *= 0.5;
            }
        }
        self.prev = Some((step.to_vec(), norm));
        Some(self.lambda)
    }
}

/// Right-hand side of the FOC divided by `2c`:
/// `sum_{k != j} (u_j - u_k) r_{j,k}(a) / 2c`.
fn foc_target(u: &[f64], r: &SquareMatrix, c: f64) -> Vec<f64> {
    let m = u.len();
    (0..m)
        .map(|j| {
            let mut acc = 0.0;
            for k in 0..m {
                if k != j {
                    acc += (u[j] - u[k]) * r.get(j, k);
                }
            }
            acc / (2.0 * c)
        })
        .collect()
}

/// Max-norm FOC residual of `votes` for type `u`, in vote units.
pub fn foc_residual(u: &[f64], votes: &[f64], field: &OpponentField, spec: &ProblemSpec) -> f64 {
    let r = pair_moments(votes, field);
    foc_target(u, &r, spec.c)
        .iter()
        .zip(votes)
        .map(|(t, a)| (t - a).abs())
        .fold(0.0, f64::max)
}


fn solve_foc(
    u: &[f64],
    field: &OpponentField,
    spec: &ProblemSpec,
    config: &SolverConfig,
    start: &[f64],
) -> Result<Vec<f64>> {
    let mut a = start.to_vec();
    let mut damper = Damper::new(config.damping, config.max_halvings);
    let mut residual = f64::INFINITY;
    for _ in 0..config.max_inner {
        let r = pair_moments(&a, field);
        let target = foc_target(u, &r, spec.c);
        let step: Vec<f64> = target.iter().zip(&a).map(|(t, x)| t - x).collect();
        residual = step.iter().fold(0.0, |acc: f64, s| acc.max(s.abs()));
        if residual <= config.inner_tol {
            VoteVector(a.clone()).check_box(spec.m, spec.vote_box_bound())?;
            return Ok(a);
        }
        let Some(lambda) = damper.observe(&step) else {
            break;
        };
        for (x, s) in a.iter_mut().zip(&step) {
            *x += lambda * s;
        }
    }
    Err(Error::NonConvergence {
        stage: "best response",
        iterations: config.max_inner,
        residual,
    })
}

/// Best response of type `u` to `field`, from the first-order conditions.
///
/// Runs the damped iteration `a <- (1 - lambda) a + lambda * RHS(a) / 2c`
/// starting at zero and fails if the residual does not fall below
/// `config.inner_tol` within `config.max_inner` steps.
pub fn best_response(
    u: &TypeVector,
    field: &OpponentField,
    spec: &ProblemSpec,
    config: &SolverConfig,
) -> Result<VoteVector> {
    check_len(spec.m, u.len())?;
    check_len(spec.m, field.m())?;
    let zero = vec![0.0; spec.m];
    solve_foc(u, field, spec, config, &zero).map(VoteVector)
}

fn use_tabular(dist: &TypeDistribution, config: &SolverConfig) -> Result<bool> {
    match (config.representation, dist.is_discrete()) {
        (Representation::Auto, d) => Ok(d),
        (Representation::Tabular, true) => Ok(true),
        (Representation::Tabular, false) => Err(Error::RepresentationMismatch(
            "tabular strategies need a discrete distribution".into(),
        )),
        (Representation::LinearPivotality, _) => Ok(false),
    }
}

/// Computes a symmetric pure-strategy Bayes-Nash equilibrium by damped
/// best-response iteration from the zero strategy.
///
/// Non-convergence is not an error: the last iterate comes back with
/// `converged = false`.
pub fn solve_equilibrium(
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    spec.validate()?;
    config.validate()?;
    dist.validate(spec.m, spec.u_max)?;
    if use_tabular(dist, config)? {
        solve_tabular(spec, dist, config)
    } else {
        solve_linear(spec, dist, config)
    }
}

fn solve_tabular(
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    let atoms = dist.atoms().expect("tabular path needs atoms").to_vec();
    let mut strategy = match &config.warm_start {
        Some(s @ Strategy::Tabular { .. }) => {
            // reorder to the atom order, failing on unknown types
            let entries = atoms
                .iter()
                .map(|a| {
                    Ok(TabularEntry {
                        values: a.values.clone(),
                        votes: s.votes(&a.values, spec)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Strategy::Tabular { entries }
        }
        Some(_) => {
            return Err(Error::RepresentationMismatch(
                "warm start must be tabular for a tabular solve".into(),
            ))
        }
        None => Strategy::zero_tabular(dist)?,
    };
    let mut basis = FieldBasis::build(spec, dist, config, 0)?;
    let refresh = config.field_refresh && basis.kind() == FieldKind::MonteCarlo;
    let mut damper = Damper::new(config.damping, config.max_halvings);
    let mut converged = false;
    let mut failure = None;
    let mut iterations = 0;

    while iterations < config.max_outer {
        iterations += 1;
        if refresh {
            basis = FieldBasis::build(spec, dist, config, iterations as u64)?;
        }
        let field = basis.resolve(&strategy, spec)?;
        let Strategy::Tabular { entries } = &strategy else {
            unreachable!()
        };
        let responses: Vec<Result<(Vec<f64>, f64)>> = entries
            .par_iter()
            .map(|e| {
                let residual = foc_residual(&e.values, &e.votes, &field, spec);
                solve_foc(&e.values, &field, spec, config, &e.votes).map(|v| (v, residual))
            })
            .collect();
        let mut step = Vec::with_capacity(entries.len() * spec.m);
        let mut residual: f64 = 0.0;
        let mut inner_error = None;
        for (e, resp) in entries.iter().zip(responses) {
            match resp {
                Ok((br, res)) => {
                    residual = residual.max(res);
                    step.extend(br.iter().zip(e.votes.iter()).map(|(b, a)| b - a));
                }
                Err(err) => {
                    inner_error = Some(err);
                    break;
                }
            }
        }
        if let Some(err) = inner_error {
            failure = Some(err.to_string());
            break;
        }
        let change = step.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        if change <= config.outer_tol && residual <= config.outer_tol {
            converged = true;
            break;
        }
        let Some(lambda) = damper.observe(&step) else {
            failure = Some("outer iteration kept oscillating after all damping halvings".into());
            break;
        };
        let Strategy::Tabular { entries } = &mut strategy else {
            unreachable!()
        };
        for (e, s) in entries.iter_mut().zip(step.chunks(spec.m)) {
            for (a, d) in e.votes.0.iter_mut().zip(s) {
                *a += lambda * d;
            }
        }
    }
    if !converged && failure.is_none() {
        failure = Some(format!("no convergence within max_outer = {}", config.max_outer));
    }
    if refresh {
        basis = FieldBasis::build(spec, dist, config, iterations as u64 + 1)?;
    }
    let field = basis.resolve(&strategy, spec)?;
    let points: Vec<(f64, Vec<f64>, Vec<f64>)> = {
        let Strategy::Tabular { entries } = &strategy else {
            unreachable!()
        };
        atoms
            .iter()
            .zip(entries)
            .map(|(a, e)| (a.prob, a.values.0.clone(), e.votes.0.clone()))
            .collect()
    };
    let (pivotality, pivotality_se) = mixture_pivotality(&points, &field);
    let report = evaluate_points(&points, &field, &pivotality, spec);
    if converged {
        strategy.validate(spec)?;
    }
    Ok(EquilibriumResult {
        strategy,
        pivotality,
        pivotality_se,
        foc_residual: report.residual,
        foc_threshold: config.outer_tol,
        residual_kind: ResidualKind::Exact,
        outer_iterations: iterations,
        converged,
        field_kind: field.kind(),
        field_atoms: field.len(),
        contraction_margin: report.margin,
        delta_n: report.delta,
        damping: damper.lambda,
        failure,
    })
}

/// `E(Q_j Q_k)` mixing own types with weights `p`, against the field.
/// Standard errors treat each field atom as one draw of the mixture.
fn mixture_pivotality(
    points: &[(f64, Vec<f64>, Vec<f64>)],
    field: &OpponentField,
) -> (SquareMatrix, SquareMatrix) {
    let m = field.m();
    let mm = m * m;
    match field.kind() {
        FieldKind::ExactMultinomial => {
            let mut out = SquareMatrix::zeros(m);
            for (p, _, votes) in points {
                let r = pair_moments(votes, field);
                for (o, x) in out.as_mut_slice().iter_mut().zip(r.as_slice()) {
                    *o += p * x;
                }
            }
            (out, SquareMatrix::zeros(m))
        }
        FieldKind::MonteCarlo => {
            // per atom: X = sum_s p_s Q_j Q_k(a_s + V)
            let mut sum = vec![0.0; mm];
            let mut sq = vec![0.0; mm];
            let mut x = vec![0.0; mm];
            let mut q = vec![0.0; m];
            for (w, v) in field.atoms() {
                x.iter_mut().for_each(|e| *e = 0.0);
                for (p, _, votes) in points {
                    for ((qk, a), vk) in q.iter_mut().zip(votes).zip(v) {
                        *qk = a + vk;
                    }
                    softmax_in_place(&mut q);
                    for j in 0..m {
                        for k in j..m {
                            x[j * m + k] += p * q[j] * q[k];
                        }
                    }
                }
                for i in 0..mm {
                    sum[i] += w * x[i];
                    sq[i] += w * x[i] * x[i];
                }
            }
            let mean = symmetric_from_upper(m, &sum);
            let second = symmetric_from_upper(m, &sq);
            let se = standard_errors(&mean, &second, field.len());
            (mean, se)
        }
    }
}

struct PointReport {
    residual: f64,
    margin: f64,
    delta: f64,
}

/// FOC residual, contraction margin and pivotality-ratio spread over the
/// given `(weight, type, votes)` points.
fn evaluate_points(
    points: &[(f64, Vec<f64>, Vec<f64>)],
    field: &OpponentField,
    pivotality: &SquareMatrix,
    spec: &ProblemSpec,
) -> PointReport {
    let m = spec.m;
    let per_point: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|(_, u, votes)| {
            let r = pair_moments(votes, field);
            let target = foc_target(u, &r, spec.c);
            let residual = target
                .iter()
                .zip(votes)
                .map(|(t, a)| (t - a).abs())
                .fold(0.0, f64::max);
            let grad = rjk_gradient_norm_sums(votes, field);
            let worst = grad.iter().copied().fold(0.0, f64::max);
            let margin = 2.0 * spec.c / m as f64 - worst;
            let mut delta: f64 = 0.0;
            for j in 0..m {
                for k in 0..m {
                    let denom = pivotality.get(j, k);
                    if j != k && denom > 0.0 {
                        delta = delta.max((r.get(j, k) / denom - 1.0).abs());
                    }
                }
            }
            (residual, margin, delta)
        })
        .collect();
    PointReport {
        residual: per_point.iter().map(|p| p.0).fold(0.0, f64::max),
        margin: per_point.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        delta: per_point.iter().map(|p| p.2).fold(0.0, f64::max),
    }
}

/// Own-type draws paired one-to-one with the field atoms, or the exact
/// support for discrete distributions.
enum OwnTypes {
    Support(Vec<(f64, Vec<f64>)>),
    Paired(Vec<Vec<f64>>),
}

fn solve_linear(
    spec: &ProblemSpec,
    dist: &TypeDistribution,
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    let m = spec.m;
    let mut pi = match &config.warm_start {
        Some(Strategy::LinearPivotality { pi }) if pi.dim() == m => pi.clone(),
        Some(_) => {
            return Err(Error::RepresentationMismatch(
                "warm start must be a linear-pivotality strategy of matching size".into(),
            ))
        }
        None => SquareMatrix::zeros(m),
    };
    let mut basis = FieldBasis::build(spec, dist, config, 0)?;
    let own = match dist {
        TypeDistribution::Discrete { atoms } => OwnTypes::Support(
            atoms.iter().map(|a| (a.prob, a.values.0.clone())).collect(),
        ),
        TypeDistribution::IndependentMarginals { .. } => OwnTypes::Paired(
            (0..config.n_mc as u64)
                .into_par_iter()
                .map(|i| dist.sample(&mut stream(config.seed, StreamRole::OwnTypeSample, i)).0)
                .collect(),
        ),
    };
    let refresh = config.field_refresh && basis.kind() == FieldKind::MonteCarlo;
    let mut damper = Damper::new(config.damping, config.max_halvings);
    let mut converged = false;
    let mut failure = None;
    let mut iterations = 0;
    let mut last = (SquareMatrix::zeros(m), SquareMatrix::zeros(m));

    while iterations < config.max_outer {
        iterations += 1;
        if refresh {
            basis = FieldBasis::build(spec, dist, config, iterations as u64)?;
        }
        let strategy = Strategy::LinearPivotality { pi: pi.clone() };
        let field = basis.resolve(&strategy, spec)?;
        let (target, se) = linear_pivotality(&pi, &own, &field, spec.c);
        let mut step = Vec::with_capacity(m * m);
        for j in 0..m {
            for k in 0..m {
                step.push(if j == k { 0.0 } else { target.get(j, k) - pi.get(j, k) });
            }
        }
        last = (target, se);
        let change = step.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        if change <= config.outer_tol {
            converged = true;
            break;
        }
        let Some(lambda) = damper.observe(&step) else {
            failure = Some("outer iteration kept oscillating after all damping halvings".into());
            break;
        };
        for (p, s) in pi.as_mut_slice().iter_mut().zip(&step) {
            *p += lambda * s;
        }
    }
    if !converged && failure.is_none() {
        failure = Some(format!("no convergence within max_outer = {}", config.max_outer));
    }
    let strategy = Strategy::LinearPivotality { pi: pi.clone() };
    if refresh {
        basis = FieldBasis::build(spec, dist, config, iterations as u64 + 1)?;
    }
    let field = basis.resolve(&strategy, spec)?;
    let probes: Vec<Vec<f64>> = match dist {
        TypeDistribution::Discrete { atoms } => atoms.iter().map(|a| a.values.0.clone()).collect(),
        TypeDistribution::IndependentMarginals { .. } => (0..config.probe_types as u64)
            .map(|i| dist.sample(&mut stream(config.seed, StreamRole::ProbeType, i)).0)
            .collect(),
    };
    let points: Vec<(f64, Vec<f64>, Vec<f64>)> = probes
        .into_iter()
        .map(|u| {
            let a = linear_votes(&pi, &u, spec.c).0;
            (1.0, u, a)
        })
        .collect();
    let (pivotality, pivotality_se) = last;
    let report = evaluate_points(&points, &field, &pivotality, spec);
    strategy.validate(spec)?;
    Ok(EquilibriumResult {
        strategy,
        pivotality,
        pivotality_se,
        foc_residual: report.residual,
        foc_threshold: config.outer_tol,
        residual_kind: ResidualKind::LinearApproximation,
        outer_iterations: iterations,
        converged,
        field_kind: field.kind(),
        field_atoms: field.len(),
        contraction_margin: report.margin,
        delta_n: report.delta,
        damping: damper.lambda,
        failure,
    })
}

/// Field average of `Q_j Q_k` at the votes the linear strategy assigns to
/// each own type.
fn linear_pivotality(
    pi: &SquareMatrix,
    own: &OwnTypes,
    field: &OpponentField,
    c: f64,
) -> (SquareMatrix, SquareMatrix) {
    let m = field.m();
    match own {
        OwnTypes::Support(points) => {
            let pts: Vec<(f64, Vec<f64>, Vec<f64>)> = points
                .iter()
                .map(|(p, u)| (*p, u.clone(), linear_votes(pi, u, c).0))
                .collect();
            mixture_pivotality(&pts, field)
        }
        OwnTypes::Paired(types) => {
            let mm = m * m;
            let mut sum = vec![0.0; mm];
            let mut sq = vec![0.0; mm];
            let mut q = vec![0.0; m];
            for ((w, v), u) in field.atoms().zip(types) {
                let a = linear_votes(pi, u, c);
                for ((qk, ak), vk) in q.iter_mut().zip(a.iter()).zip(v) {
                    *qk = ak + vk;
                }
                softmax_in_place(&mut q);
                for j in 0..m {
                    for k in j..m {
                        let x = q[j] * q[k];
                        sum[j * m + k] += w * x;
                        sq[j * m + k] += w * x * x;
                    }
                }
            }
            let mean = symmetric_from_upper(m, &sum);
            let second = symmetric_from_upper(m, &sq);
            let se = standard_errors(&mean, &second, field.len());
            (mean, se)
        }
    }
}
