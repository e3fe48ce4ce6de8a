//! Acceptance suite. Runs every criterion, prints one verdict line each, and
//! exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;

use qtm_cli::commands::{solve_cell, sweep_cells, SweepCell};
use qtm_cli::config::ExperimentConfig;
use qtm_core::diagnostics::plurality_baseline;
use qtm_core::equilibrium::{
    best_response, build_field, foc_residual, solve_equilibrium, EquilibriumResult, FieldKind,
    OpponentField, ResidualKind, SolverConfig, Strategy,
};
use qtm_core::mechanism::{
    payoff, select_probs, selection_derivatives, ProblemSpec, TypeVector, VoteTotals, VoteVector,
};
use qtm_core::oracle::{oracle_equilibrium, OracleConfig};
use qtm_core::preferences::TypeDistribution;
use qtm_core::rng::{stream, StreamRole};

const CASES: u64 = 1000;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    let config = ExperimentConfig::load(&configs().join(name)).unwrap();
    config.validate().unwrap();
    config
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Equilibria gathered along the way, checked again by criterion 5.
#[derive(Default)]
struct Solved(Vec<(String, EquilibriumResult)>);

fn report_of(cell: &SweepCell) -> &qtm_core::diagnostics::DiagnosticsReport {
    cell.report.as_ref().expect("cell produced a report")
}

fn criterion1(solved: &mut Solved) -> (Verdict, f64) {
    let config = load("example1_sweep.json");
    let cells: Vec<SweepCell> = sweep_cells(&config).into_iter().map(|(c, _)| c).collect();
    let mut best: Option<(f64, f64)> = None;
    let mut listing = Vec::new();
    for cell in &cells {
        let r = report_of(cell);
        let eq = cell.equilibrium.clone().unwrap();
        listing.push(format!("c={} {:.4}", cell.c, r.efficiency.efficiency_prob));
        if eq.converged && r.efficiency.efficiency_prob >= 0.96 - 0.005 {
            if best.is_none_or(|(_, e)| r.efficiency.efficiency_prob > e) {
                best = Some((cell.c, r.efficiency.efficiency_prob));
            }
        }
        solved.0.push((format!("example1 c={}", cell.c), eq));
    }
    let documented = load("example1.json").problem.c;
    match best {
        Some((c, e)) => (
            verdict(
                c == documented,
                format!(
                    "best passing c = {c} with efficiency {e:.4} >= 0.955 (documented c = {documented}); {}",
                    listing.join(", ")
                ),
            ),
            c,
        ),
        None => (verdict(false, format!("no c reaches 0.955: {}", listing.join(", "))), documented),
    }
}

fn criterion2() -> Verdict {
    let config = load("example1.json");
    let report = plurality_baseline(&config.problem, &config.distribution, 100_000, config.seed).unwrap();
    let freq = report.win_frequency[1];
    verdict(
        freq <= 0.001,
        format!("sincere plurality picks alternative 2 with frequency {freq} over 1e5 trials"),
    )
}

fn criterion3(c1: f64) -> Verdict {
    let config = load("example1_beliefs.json");
    let body = solve_cell(&config, &config.problem).unwrap();
    let beliefs = body.beliefs.unwrap();
    let win = beliefs.win_probability[1];
    let same_c = config.problem.c == c1;
    verdict(
        same_c && win >= 0.57 - 0.01 && beliefs.groups.iter().all(|g| g.converged),
        format!(
            "all believe p=0.95, true p=0.501, c={}: alternative 2 wins with probability {win:.4} (se {:.1e}) >= 0.56",
            config.problem.c, beliefs.win_probability_se[1]
        ),
    )
}

fn criterion4(solved: &mut Solved) -> Verdict {
    let mut worst_gap: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    let mut all_converged = true;
    for n in [2, 3] {
        for (p, c) in [(0.6, 1.0), (0.5, 0.25), (0.8, 2.0), (0.3, 0.5)] {
            let spec = ProblemSpec::new(2, n, c, 1.0).unwrap();
            let dist = TypeDistribution::discrete([(p, [1.0, 0.0]), (1.0 - p, [0.0, 1.0])]);
            let solver = SolverConfig::default();
            let oracle = oracle_equilibrium(&spec, &dist, &OracleConfig::default()).unwrap();
            let eq = solve_equilibrium(&spec, &dist, &solver).unwrap();
            all_converged &= oracle.converged && eq.converged;
            worst_gap = worst_gap.max(oracle.strategy.distance(&eq.strategy).unwrap());
            let field = build_field(&oracle.strategy, &spec, &dist, &solver).unwrap();
            if let Strategy::Tabular { entries } = &oracle.strategy {
                for e in entries {
                    worst_res = worst_res.max(foc_residual(&e.values, &e.votes, &field, &spec));
                }
            }
            solved.0.push((format!("two-type n={n} p={p} c={c}"), eq));
        }
    }
    verdict(
        all_converged && worst_gap <= 1e-3 && worst_res <= 1e-3,
        format!("8 instances: max vote gap {worst_gap:.2e} <= 1e-3, max oracle FOC residual {worst_res:.2e} <= 1e-3"),
    )
}

fn criterion5(solved: &Solved) -> Verdict {
    let exact: Vec<_> = solved
        .0
        .iter()
        .filter(|(_, e)| {
            e.converged
                && e.strategy.is_tabular()
                && e.field_kind == FieldKind::ExactMultinomial
                && e.residual_kind == ResidualKind::Exact
        })
        .collect();
    let worst = exact
        .iter()
        .max_by(|a, b| a.1.foc_residual.total_cmp(&b.1.foc_residual))
        .unwrap();
    verdict(
        !exact.is_empty() && worst.1.foc_residual <= 1e-6,
        format!(
            "{} exact tabular equilibria, max residual {:.2e} ({}) <= 1e-6",
            exact.len(),
            worst.1.foc_residual,
            worst.0
        ),
    )
}

fn criteria6_7(solved: &mut Solved) -> (Verdict, Verdict) {
    let config = load("trend.json");
    let cells: Vec<SweepCell> = sweep_cells(&config).into_iter().map(|(c, _)| c).collect();
    let reports: Vec<_> = cells.iter().map(report_of).collect();
    let mut monotone = true;
    for w in reports.windows(2) {
        let (a, b) = (&w[0].concentration, &w[1].concentration);
        let slack = 2.0 * (a.beta_se.powi(2) + b.beta_se.powi(2)).sqrt();
        monotone &= b.beta_estimate <= a.beta_estimate + slack;
    }
    let first = reports.first().unwrap();
    let last = reports.last().unwrap();
    let delta = first.delta;
    let eff_up = last.efficiency.efficiency_prob >= first.efficiency.efficiency_prob;
    let converged = cells.iter().all(|c| c.equilibrium.as_ref().unwrap().converged);
    for cell in &cells {
        solved.0.push((format!("trend n={}", cell.n), cell.equilibrium.clone().unwrap()));
    }
    let betas: Vec<String> = reports
        .iter()
        .map(|r| format!("n={} beta={:.3}", r.n, r.concentration.beta_estimate))
        .collect();
    let six = verdict(
        converged && delta >= 0.3 && monotone && eff_up,
        format!(
            "delta={delta}, {}; efficiency {:.4} (n=50) -> {:.4} (n=400)",
            betas.join(", "),
            first.efficiency.efficiency_prob,
            last.efficiency.efficiency_prob
        ),
    );
    let ext = &last.extremes;
    let seven = verdict(
        last.n == 400 && ext.extremes_freq >= ext.extremes_bound,
        format!(
            "n=400: P(V_m < 0 < V_1) = {:.4} >= bound {:.4}",
            ext.extremes_freq, ext.extremes_bound
        ),
    );
    (six, seven)
}

/// Random vote profile inside the box: `(spec, u, own, others)`.
fn random_profile(i: u64) -> (ProblemSpec, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = stream(8, StreamRole::Other, i);
    let m = rng.random_range(2..=5);
    let n = rng.random_range(2..=6);
    let spec = ProblemSpec::new(m, n, rng.random_range(0.1..10.0), 1.0).unwrap();
    let b = spec.vote_box_bound();
    let mut vec = |lo: f64, hi: f64| (0..m).map(|_| rng.random_range(lo..=hi)).collect::<Vec<f64>>();
    let u = vec(0.0, 1.0);
    let own = vec(-b, b);
    let others = (0..n - 1).map(|_| vec(-b, b)).collect();
    (spec, u, own, others)
}

fn criterion8() -> Verdict {
    let mut worst = [0.0f64; 5];
    for i in 0..CASES {
        let (spec, u, own, others) = random_profile(i);
        let m = spec.m;
        let mut rng = stream(9, StreamRole::Other, i);

        // normalization and shift invariance
        let v: Vec<f64> = (0..m).map(|_| rng.random_range(-50.0..50.0)).collect();
        let shift = rng.random_range(-1e3..1e3);
        let q = select_probs(&VoteTotals(v.clone()));
        let qs = select_probs(&VoteTotals(v.iter().map(|x| x + shift).collect()));
        let mut err = (q.iter().sum::<f64>() - 1.0).abs();
        for (a, b) in q.iter().zip(qs.iter()) {
            err = err.max((a - b).abs());
        }
        worst[0] = worst[0].max(err);

        // budget balance over the whole profile
        let mut all = others.clone();
        all.push(own.clone());
        let (mut paid, mut received) = (0.0, 0.0);
        for k in 0..all.len() {
            let rest: Vec<VoteVector> = all
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, x)| VoteVector(x.clone()))
                .collect();
            let p = payoff(&TypeVector(u.clone()), &VoteVector(all[k].clone()), &rest, &spec).unwrap();
            paid += p.own_cost;
            received += p.rebate;
        }
        worst[1] = worst[1].max((paid - received).abs() / paid.max(f64::MIN_POSITIVE));

        // analytic against central-difference derivatives
        let v_minus: Vec<f64> = (0..m).map(|j| others.iter().map(|o| o[j]).sum()).collect();
        let jac = selection_derivatives(&VoteVector(own.clone()), &VoteTotals(v_minus.clone())).unwrap();
        let scale = jac.as_slice().iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let h = 1e-5;
        let q_at = |a: &[f64]| select_probs(&VoteTotals(a.iter().zip(&v_minus).map(|(x, y)| x + y).collect())).0;
        for j in 0..m {
            let (mut up, mut down) = (own.clone(), own.clone());
            up[j] += h;
            down[j] -= h;
            let (qu, qd) = (q_at(&up), q_at(&down));
            for k in 0..m {
                let fd = (qu[k] - qd[k]) / (2.0 * h);
                worst[2] = worst[2].max((fd - jac.get(j, k)).abs() / scale);
            }
        }

        // (u, c) -> (s u, s c) leaves best responses unchanged
        let s = rng.random_range(0.1..10.0);
        let field = OpponentField::from_atoms(
            FieldKind::ExactMultinomial,
            m,
            &[
                (0.5, VoteTotals(v_minus.clone())),
                (0.5, VoteTotals(v_minus.iter().map(|x| -x).collect())),
            ],
        )
        .unwrap();
        let solver = SolverConfig { max_inner: 10_000, inner_tol: 1e-13, ..SolverConfig::default() };
        let scaled = ProblemSpec::new(m, spec.n, spec.c * s, s).unwrap();
        let a = best_response(&TypeVector(u.clone()), &field, &spec, &solver).unwrap();
        let b = best_response(&TypeVector(u.iter().map(|x| x * s).collect()), &field, &scaled, &solver).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            worst[3] = worst[3].max((x - y).abs());
        }

        // relabeling alternatives permutes the lottery and keeps the payoff
        let mut order: Vec<usize> = (0..m).collect();
        for k in (1..m).rev() {
            order.swap(k, rng.random_range(0..=k));
        }
        let perm = |x: &[f64]| order.iter().map(|&k| x[k]).collect::<Vec<f64>>();
        let base = payoff(
            &TypeVector(u.clone()),
            &VoteVector(own.clone()),
            &others.iter().map(|o| VoteVector(o.clone())).collect::<Vec<_>>(),
            &spec,
        )
        .unwrap();
        let permuted = payoff(
            &TypeVector(perm(&u)),
            &VoteVector(perm(&own)),
            &others.iter().map(|o| VoteVector(perm(o))).collect::<Vec<_>>(),
            &spec,
        )
        .unwrap();
        let mut err = (base.total - permuted.total).abs();
        let totals: Vec<f64> = (0..m).map(|j| own[j] + v_minus[j]).collect();
        let qp = select_probs(&VoteTotals(perm(&totals)));
        for (a, b) in perm(&select_probs(&VoteTotals(totals)).0).iter().zip(qp.iter()) {
            err = err.max((a - b).abs());
        }
        worst[4] = worst[4].max(err);
    }
    let limits = [1e-12, 1e-12, 1e-6, 1e-9, 1e-12];
    let names = ["softmax", "balance", "derivatives", "scale", "permutation"];
    let pass = worst.iter().zip(&limits).all(|(w, l)| w <= l);
    let detail: Vec<String> = names
        .iter()
        .zip(&worst)
        .zip(&limits)
        .map(|((n, w), l)| format!("{n} {w:.1e}<={l:.0e}"))
        .collect();
    verdict(pass, format!("{CASES} cases each: {}", detail.join(", ")))
}

fn run_cli(args: &[&str], config: &Path, cwd: &Path, workers: usize) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_qtm"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--workers")
        .arg(workers.to_string())
        .current_dir(cwd)
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    status.code().unwrap_or(-1)
}

fn criterion9() -> Verdict {
    let scratch = tempfile::tempdir().unwrap();
    let write = |name: &str, mut config: ExperimentConfig| {
        config.output_dir = PathBuf::from("out");
        config.diagnostics.trials = 5_000;
        let path = scratch.path().join(name);
        std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
        path
    };
    let mut small = load("example1.json");
    small.problem.n = 60;
    let example = write("example.json", small.clone());
    let mut sweep = small.clone();
    sweep.sweep = Some(qtm_cli::config::Sweep { n: vec![20, 40], c: vec![0.5, 1.0] });
    let sweep = write("sweep.json", sweep);
    let oracle = write("oracle.json", load("oracle_small.json"));
    let mut beliefs = load("example1_beliefs.json");
    beliefs.problem.n = 60;
    let beliefs = write("beliefs.json", beliefs);

    let files = ["result.json", "report.json", "report.csv", "sweep.csv", "sweep.json", "oracle.json"];
    let mut outputs = Vec::new();
    for workers in [1, 8, 1] {
        let dir = tempfile::tempdir().unwrap();
        let mut codes = vec![
            run_cli(&["solve"], &example, dir.path(), workers),
            run_cli(&["diagnose"], &example, dir.path(), workers),
            run_cli(&["sweep"], &sweep, dir.path(), workers),
            run_cli(&["oracle"], &oracle, dir.path(), workers),
        ];
        let mut bytes: Vec<Vec<u8>> = files
            .iter()
            .map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap_or_default())
            .collect();
        // the beliefs run overwrites result.json, so read it separately
        let bdir = tempfile::tempdir().unwrap();
        codes.push(run_cli(&["solve"], &beliefs, bdir.path(), workers));
        bytes.push(std::fs::read(bdir.path().join("out/result.json")).unwrap_or_default());
        outputs.push((codes, bytes));
    }
    let all_written = outputs[0].1.iter().all(|b| !b.is_empty());
    let codes_ok = outputs.iter().all(|(c, _)| c.iter().all(|&x| x == 0));
    let identical = outputs.windows(2).all(|w| w[0].1 == w[1].1);
    verdict(
        all_written && codes_ok && identical,
        format!(
            "solve, diagnose, sweep, oracle and a beliefs solve at workers 1, 8, 1: exit codes {:?}, {} files byte-identical = {identical}",
            outputs[0].0,
            outputs[0].1.len()
        ),
    )
}

fn main() {
    let mut solved = Solved::default();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let (v1, c1) = criterion1(&mut solved);
    results.push((1, "Example 1 efficiency", v1));
    results.push((2, "Example 1 plurality baseline", criterion2()));
    results.push((3, "wrong-beliefs run", criterion3(c1)));
    results.push((4, "oracle equivalence", criterion4(&mut solved)));
    let (v6, v7) = criteria6_7(&mut solved);
    results.push((5, "FOC residual", criterion5(&solved)));
    results.push((6, "concentration trend", v6));
    results.push((7, "extremes bound", v7));
    results.push((8, "invariant suite", criterion8()));
    results.push((9, "determinism", criterion9()));
    let mut failed = 0;
    for (k, name, v) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {k} [{tag}] {name}: {}", v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
