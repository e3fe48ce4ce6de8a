use qtm_core::equilibrium::{
    solve_equilibrium, solve_with_beliefs, FieldKind, ResidualKind, SolverConfig,
};
use qtm_core::mechanism::ProblemSpec;
use qtm_core::preferences::{BeliefGroup, BeliefProfile, Marginal, TypeDistribution};

fn three_types() -> TypeDistribution {
    TypeDistribution::discrete([
        (0.5, [1.0, 0.4, 0.0]),
        (0.3, [0.2, 1.0, 0.5]),
        (0.2, [0.0, 0.1, 1.0]),
    ])
}

#[test]
fn exact_tabular_equilibria_meet_the_residual_target() {
    let cases = [
        (ProblemSpec::new(2, 5, 1.0, 1.0).unwrap(), TypeDistribution::discrete([(0.7, [1.0, 0.0]), (0.3, [0.0, 1.0])])),
        (ProblemSpec::new(3, 40, 0.5, 1.0).unwrap(), three_types()),
        (ProblemSpec::new(3, 60, 1.0, 3.0).unwrap(), TypeDistribution::example_one(0.55)),
    ];
    for (spec, dist) in cases {
        let eq = solve_equilibrium(&spec, &dist, &SolverConfig::default()).unwrap();
        assert!(eq.converged, "{spec:?}");
        assert_eq!(eq.field_kind, FieldKind::ExactMultinomial);
        assert_eq!(eq.residual_kind, ResidualKind::Exact);
        assert!(eq.foc_residual <= 1e-6, "{spec:?}: {}", eq.foc_residual);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = ProblemSpec::new(3, 30, 1.0, 1.0).unwrap();
    let dist = TypeDistribution::IndependentMarginals {
        marginals: vec![
            Marginal::Beta { alpha: 3.0, beta: 2.0, lo: 0.0, hi: 1.0 },
            Marginal::Uniform { lo: 0.0, hi: 1.0 },
            Marginal::Beta { alpha: 2.0, beta: 3.0, lo: 0.0, hi: 1.0 },
        ],
    };
    let config = SolverConfig { n_mc: 20_000, seed: 9, ..SolverConfig::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| solve_equilibrium(&spec, &dist, &config).unwrap())
    };
    let one = run(1);
    let eight = run(8);
    assert_eq!(one, eight);
    assert_eq!(one.field_kind, FieldKind::MonteCarlo);
    assert_eq!(one.residual_kind, ResidualKind::LinearApproximation);
    assert!(one.converged);
}

#[test]
fn one_outer_iteration_does_not_converge() {
    let spec = ProblemSpec::new(3, 40, 0.5, 1.0).unwrap();
    let config = SolverConfig { max_outer: 1, ..SolverConfig::default() };
    let eq = solve_equilibrium(&spec, &three_types(), &config).unwrap();
    assert!(!eq.converged);
    assert_eq!(eq.outer_iterations, 1);
}

#[test]
fn votes_favor_high_mean_alternatives() {
    let spec = ProblemSpec::new(3, 40, 0.5, 1.0).unwrap();
    let eq = solve_equilibrium(&spec, &three_types(), &SolverConfig::default()).unwrap();
    for atom in three_types().atoms().unwrap() {
        let a = eq.strategy.votes(&atom.values, &spec).unwrap();
        // the favorite gets a positive vote, the least liked a negative one
        let best = qtm_core::mechanism::argmax(&atom.values);
        assert!(a[best] > 0.0);
        let worst = (0..3).min_by(|&i, &j| atom.values[i].total_cmp(&atom.values[j])).unwrap();
        assert!(a[worst] < 0.0);
    }
}

#[test]
fn common_beliefs_reproduce_the_plain_equilibrium() {
    let spec = ProblemSpec::new(2, 10, 1.0, 1.0).unwrap();
    let dist = TypeDistribution::discrete([(0.6, [1.0, 0.0]), (0.4, [0.0, 1.0])]);
    let config = SolverConfig::default();
    let plain = solve_equilibrium(&spec, &dist, &config).unwrap();
    let out = solve_with_beliefs(&spec, &dist, &BeliefProfile::common(dist.clone()), &config, 2_000).unwrap();
    assert_eq!(out.groups.len(), 1);
    assert_eq!(out.groups[0].strategy, plain.strategy);
    assert_eq!(out.group_sizes, vec![10]);
    let total: f64 = out.win_probability.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn split_beliefs_assign_every_agent() {
    let spec = ProblemSpec::new(2, 7, 1.0, 1.0).unwrap();
    let truth = TypeDistribution::discrete([(0.5, [1.0, 0.0]), (0.5, [0.0, 1.0])]);
    let beliefs = BeliefProfile {
        groups: vec![
            BeliefGroup { fraction: 0.5, distribution: TypeDistribution::discrete([(0.9, [1.0, 0.0]), (0.1, [0.0, 1.0])]) },
            BeliefGroup { fraction: 0.5, distribution: truth.clone() },
        ],
    };
    let out = solve_with_beliefs(&spec, &truth, &beliefs, &SolverConfig::default(), 1_000).unwrap();
    assert_eq!(out.group_sizes.iter().sum::<usize>(), 7);
}
