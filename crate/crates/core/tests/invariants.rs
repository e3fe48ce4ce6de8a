use proptest::prelude::*;

use qtm_core::equilibrium::{best_response, FieldKind, OpponentField, SolverConfig};
use qtm_core::mechanism::{
    payoff, select_probs, selection_derivatives, ProblemSpec, TypeVector, VoteTotals, VoteVector,
};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(1000)
}

fn totals(m: usize, spread: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-spread..spread, m)
}

/// An instance: `(m, n, c, u, own, others)` with votes inside the box.
fn profile() -> impl Strategy<Value = (ProblemSpec, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    (2usize..=5, 2usize..=6, 0.1f64..10.0).prop_flat_map(|(m, n, c)| {
        let spec = ProblemSpec::new(m, n, c, 1.0).unwrap();
        let b = spec.vote_box_bound();
        (
            Just(spec),
            prop::collection::vec(0.0..=1.0f64, m),
            prop::collection::vec(-b..=b, m),
            prop::collection::vec(prop::collection::vec(-b..=b, m), n - 1),
        )
    })
}

fn permute<T: Copy>(x: &[T], order: &[usize]) -> Vec<T> {
    order.iter().map(|&i| x[i]).collect()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn softmax_is_normalized_and_shift_invariant(
        v in (2usize..=8).prop_flat_map(|m| totals(m, 50.0)),
        shift in -1e3f64..1e3,
    ) {
        let q = select_probs(&VoteTotals(v.clone()));
        let sum: f64 = q.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(q.iter().all(|p| (0.0..=1.0).contains(p)));
        let shifted = select_probs(&VoteTotals(v.iter().map(|x| x + shift).collect()));
        for (a, b) in q.iter().zip(shifted.iter()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn transfers_balance((spec, u, own, others) in profile()) {
        // every agent in turn plays against the rest
        let mut all = others.clone();
        all.push(own.clone());
        let mut paid = 0.0;
        let mut received = 0.0;
        for i in 0..all.len() {
            let rest: Vec<VoteVector> = all
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, v)| VoteVector(v.clone()))
                .collect();
            let p = payoff(&TypeVector(u.clone()), &VoteVector(all[i].clone()), &rest, &spec).unwrap();
            paid += p.own_cost;
            received += p.rebate;
        }
        prop_assert!((paid - received).abs() <= 1e-12 * paid.max(1e-300));
    }

    #[test]
    fn derivatives_match_central_differences(
        (spec, _u, own, others) in profile(),
    ) {
        let m = spec.m;
        let v_minus: Vec<f64> = (0..m).map(|j| others.iter().map(|o| o[j]).sum()).collect();
        let jac = selection_derivatives(&VoteVector(own.clone()), &VoteTotals(v_minus.clone())).unwrap();
        let h = 1e-5;
        let q_at = |a: &[f64]| {
            select_probs(&VoteTotals(a.iter().zip(&v_minus).map(|(x, v)| x + v).collect())).0
        };
        let scale = jac.as_slice().iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        for j in 0..m {
            let mut up = own.clone();
            let mut down = own.clone();
            up[j] += h;
            down[j] -= h;
            let (qu, qd) = (q_at(&up), q_at(&down));
            for k in 0..m {
                let fd = (qu[k] - qd[k]) / (2.0 * h);
                let rel = (fd - jac.get(j, k)).abs() / scale;
                prop_assert!(rel <= 1e-6, "({j},{k}): fd {fd} analytic {} rel {rel}", jac.get(j, k));
            }
        }
    }

    #[test]
    fn permutation_is_equivariant(
        (spec, u, own, others) in profile(),
        seed in any::<u64>(),
    ) {
        let m = spec.m;
        let mut order: Vec<usize> = (0..m).collect();
        // deterministic Fisher-Yates from the seed
        let mut s = seed;
        for i in (1..m).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let base = payoff(
            &TypeVector(u.clone()),
            &VoteVector(own.clone()),
            &others.iter().map(|o| VoteVector(o.clone())).collect::<Vec<_>>(),
            &spec,
        )
        .unwrap();
        let permuted = payoff(
            &TypeVector(permute(&u, &order)),
            &VoteVector(permute(&own, &order)),
            &others.iter().map(|o| VoteVector(permute(o, &order))).collect::<Vec<_>>(),
            &spec,
        )
        .unwrap();
        prop_assert!((base.total - permuted.total).abs() <= 1e-12);
        let v: Vec<f64> = (0..m).map(|j| own[j] + others.iter().map(|o| o[j]).sum::<f64>()).collect();
        let q = select_probs(&VoteTotals(v.clone()));
        let qp = select_probs(&VoteTotals(permute(&v, &order)));
        for (a, b) in permute(&q, &order).iter().zip(qp.iter()) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn scaling_values_and_cost_together_changes_nothing(
        (spec, u, _own, others) in profile(),
        s in 0.1f64..10.0,
    ) {
        let m = spec.m;
        let v_minus: Vec<f64> = (0..m).map(|j| others.iter().map(|o| o[j]).sum()).collect();
        let field = OpponentField::from_atoms(
            FieldKind::ExactMultinomial,
            m,
            &[(0.5, VoteTotals(v_minus.clone())), (0.5, VoteTotals(v_minus.iter().map(|x| -x).collect()))],
        )
        .unwrap();
        let scaled = ProblemSpec::new(m, spec.n, spec.c * s, s).unwrap();
        let u_scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
        let solver = SolverConfig { max_inner: 10_000, inner_tol: 1e-13, ..SolverConfig::default() };
        let a = best_response(&TypeVector(u), &field, &spec, &solver).unwrap();
        let b = best_response(&TypeVector(u_scaled), &field, &scaled, &solver).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }
}
