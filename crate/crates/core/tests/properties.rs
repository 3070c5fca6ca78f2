//! Property tests for the library's invariants.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rem_core::dataset::{latent_class_sample, RecordSet};
use rem_core::evaluate::{trunc_rescale, workload_error, Norm};
use rem_core::kron::{FactorKind, KronOperator};
use rem_core::lnn::{grem_lnn, LnnConfig};
use rem_core::mechanisms::{run_scalable_mwem, MwemConfig};
use rem_core::privacy::{gaussian_measure, solve_rho, stream_rng, PrivacyAccountant};
use rem_core::reconstruct::{grem_mle, CombinedResidual, ResidualMeasurement};
use rem_core::workload::{
    all_k_way, downward_closure, marginal_from_residuals, marginal_to_residual_op,
    residual_from_marginal, residual_to_marginal_op, Clique, Domain, MarginalTable, OperatorCache,
    ResidualVector,
};

fn factor() -> impl Strategy<Value = FactorKind<f64>> {
    prop_oneof![
        (1usize..5).prop_map(FactorKind::Identity),
        (1usize..5).prop_map(FactorKind::OnesRow),
        (1usize..5, 0.1f64..2.0).prop_map(|(n, s)| FactorKind::ScaledOnesCol(n, s)),
        (2usize..6).prop_map(FactorKind::Diff),
        (2usize..6).prop_map(FactorKind::DiffPinv),
        Just(FactorKind::ScalarOne),
    ]
}

/// A factor whose input length is `n`.
fn factor_from(n: usize) -> BoxedStrategy<FactorKind<f64>> {
    let mut options: Vec<BoxedStrategy<FactorKind<f64>>> = vec![
        Just(FactorKind::Identity(n)).boxed(),
        Just(FactorKind::OnesRow(n)).boxed(),
    ];
    if n >= 2 {
        options.push(Just(FactorKind::Diff(n)).boxed());
    }
    if n >= 1 {
        options.push(Just(FactorKind::DiffPinv(n + 1)).boxed());
    }
    if n == 1 {
        options.push(
            (1usize..5)
                .prop_map(|m| FactorKind::ScaledOnesCol(m, 0.5))
                .boxed(),
        );
        options.push(Just(FactorKind::ScalarOne).boxed());
    }
    proptest::strategy::Union::new(options).boxed()
}

fn domain_sizes() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..5, 1..4)
}

fn full(d: &Domain) -> Clique {
    Clique::new((0..d.len()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kron_apply_matches_dense(
        factors in prop::collection::vec(factor(), 1..4),
        seed in any::<u64>(),
    ) {
        let op = KronOperator::new(factors).unwrap();
        prop_assume!(op.in_len() <= 2048);
        let dense = op.dense_materialize().unwrap();
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        let x: Vec<f64> = (0..op.in_len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let expect = dense.matvec(&x).unwrap();
        for (a, b) in op.apply(&x).unwrap().iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn kron_mixed_product(
        inner in prop::collection::vec(factor(), 1..4),
        seed in any::<u64>(),
    ) {
        let b = KronOperator::new(inner.clone()).unwrap();
        prop_assume!(b.in_len() <= 512 && b.out_len() <= 512);
        // One outer factor per inner factor, each consuming that factor's output.
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        let outer: Vec<FactorKind<f64>> = inner
            .iter()
            .map(|f| factor_from(f.out_len()).new_tree(&mut runner).unwrap().current())
            .collect();
        let a = KronOperator::new(outer).unwrap();
        prop_assume!(a.out_len() <= 512);
        let ab = a.dense_materialize().unwrap().matmul(&b.dense_materialize().unwrap()).unwrap();
        use rand::Rng;
        let mut rng = stream_rng(seed, 1);
        let x: Vec<f64> = (0..b.in_len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = a.apply(&b.apply(&x).unwrap()).unwrap();
        for (g, e) in got.iter().zip(ab.matvec(&x).unwrap()) {
            prop_assert!((g - e).abs() <= 1e-9);
        }
    }

    #[test]
    fn residual_round_trip_is_exact(sizes in domain_sizes(), seed in any::<u64>()) {
        let d = Domain::from_sizes(&sizes).unwrap();
        let data = latent_class_sample(&d, 40, 2, seed).unwrap();
        let gamma = full(&d);
        let mu = data.exact_marginal::<f64>(&gamma).unwrap();
        let parts: Vec<ResidualVector<f64>> = gamma
            .subsets()
            .iter()
            .map(|t| residual_from_marginal(&d, &mu, t).unwrap())
            .collect();
        let back = marginal_from_residuals(&d, &gamma, parts.iter()).unwrap();
        for (a, b) in back.values.iter().zip(&mu.values) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn reconstruction_maps_are_pseudoinverses(sizes in domain_sizes(), pick in any::<u64>()) {
        let d = Domain::from_sizes(&sizes).unwrap();
        let gamma = full(&d);
        let subsets = gamma.subsets();
        let tau = &subsets[pick as usize % subsets.len()];
        let a = residual_to_marginal_op::<f64>(&d, &gamma, tau).unwrap().dense_materialize().unwrap();
        let ap = marginal_to_residual_op::<f64>(&d, &gamma, tau).unwrap().dense_materialize().unwrap();
        let prod = ap.matmul(&a).unwrap();
        let m = d.residual_len(tau);
        prop_assert_eq!(prod.rows(), m);
        for i in 0..m {
            for j in 0..m {
                let e = if i == j { 1.0 } else { 0.0 };
                prop_assert!((prod.row(i)[j] - e).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn marginals_sum_to_n_and_are_consistent(sizes in domain_sizes(), rows in 0usize..60, seed in any::<u64>()) {
        let d = Domain::from_sizes(&sizes).unwrap();
        let data: RecordSet = latent_class_sample(&d, rows, 3, seed).unwrap();
        let gamma = full(&d);
        let big = data.exact_marginal::<f64>(&gamma).unwrap();
        for tau in gamma.subsets() {
            let small = data.exact_marginal::<f64>(&tau).unwrap();
            prop_assert_eq!(small.total(), rows as f64);
            // Summing the full table over the other axes.
            let mut folded = vec![0.0; small.values.len()];
            for (cell, v) in big.values.iter().enumerate() {
                let mut rest = cell;
                let mut digits = vec![0; d.len()];
                for k in (0..d.len()).rev() {
                    digits[k] = rest % d.size(k);
                    rest /= d.size(k);
                }
                let idx = tau.iter().fold(0, |acc, k| acc * d.size(k) + digits[k]);
                folded[idx] += v;
            }
            prop_assert_eq!(folded, small.values);
        }
    }

    #[test]
    fn accountant_sums_and_composes(k in 1usize..12, sigma2 in 0.1f64..10.0, seed in any::<u64>()) {
        let mut acc = PrivacyAccountant::new(1e6).unwrap();
        for i in 0..k {
            gaussian_measure(&[1.0, 2.0], sigma2, &mut stream_rng(seed, i as u64), &mut acc, "m").unwrap();
        }
        let sum: f64 = acc.ledger().iter().map(|s| s.rho).sum();
        prop_assert_eq!(sum, acc.rho_spent());
        prop_assert!((acc.rho_spent() - k as f64 / (2.0 * sigma2)).abs() <= 1e-12 * k as f64);
        let mut tight = PrivacyAccountant::new(0.1).unwrap();
        let before = tight.rho_spent();
        prop_assert!(gaussian_measure(&[1.0], 1.0, &mut stream_rng(seed, 0), &mut tight, "big").is_err());
        prop_assert_eq!(tight.rho_spent(), before);
    }

    #[test]
    fn trunc_rescale_is_nonnegative_with_target_sum(values in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let d = Domain::from_sizes(&[values.len()]).unwrap();
        let t = MarginalTable::new(&d, Clique::new(vec![0]).unwrap(), values.clone()).unwrap();
        let r = trunc_rescale(&t);
        prop_assert!(r.values.iter().all(|&v| v >= 0.0));
        let target = values.iter().sum::<f64>().max(0.0);
        let kept: f64 = values.iter().filter(|&&v| v > 0.0).sum();
        if kept > 0.0 {
            prop_assert!((r.total() - target).abs() <= 1e-9 * target.max(1.0));
        } else {
            prop_assert_eq!(r.total(), 0.0);
        }
    }

    #[test]
    fn l1_error_obeys_triangle_inequality(
        a in prop::collection::vec(-20.0f64..20.0, 6),
        b in prop::collection::vec(-20.0f64..20.0, 6),
        c in prop::collection::vec(-20.0f64..20.0, 6),
    ) {
        let d = Domain::from_sizes(&[2, 3]).unwrap();
        let g = Clique::new(vec![0, 1]).unwrap();
        let m = |v: &Vec<f64>| BTreeMap::from([(g.clone(), MarginalTable::new(&d, g.clone(), v.clone()).unwrap())]);
        let (ma, mb, mc) = (m(&a), m(&b), m(&c));
        let ab = workload_error(&ma, &mb, Norm::L1).unwrap();
        let bc = workload_error(&mb, &mc, Norm::L1).unwrap();
        let ac = workload_error(&ma, &mc, Norm::L1).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstructed_tables_are_consistent(sizes in prop::collection::vec(2usize..4, 3..5), seed in any::<u64>()) {
        let d = Domain::from_sizes(&sizes).unwrap();
        let cache = OperatorCache::<f64>::new(&d);
        let w = all_k_way(d.len(), 2);
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        let zs: Vec<ResidualMeasurement<f64>> = downward_closure(&w)
            .into_iter()
            .map(|t| {
                let m = d.residual_len(&t);
                let v = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
                ResidualMeasurement::new(&d, t, v, rng.random_range(0.5..2.0)).unwrap()
            })
            .collect();
        let rec = grem_mle(&cache, &w, zs).unwrap();
        for g1 in &w {
            for g2 in &w {
                let shared = Clique::new(g1.iter().filter(|&k| g2.contains(k)).collect()).unwrap();
                for tau in shared.subsets() {
                    let a = residual_from_marginal(&d, &rec.marginals[g1], &tau).unwrap();
                    let b = residual_from_marginal(&d, &rec.marginals[g2], &tau).unwrap();
                    for (x, y) in a.values.iter().zip(&b.values) {
                        prop_assert!((x - y).abs() <= 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn mwem_ledger_matches_budget(
        eps in 0.05f64..20.0,
        log_delta in -12.0f64..-3.0,
        rounds in 1usize..6,
        alpha in 0.01f64..0.99,
        seed in any::<u64>(),
    ) {
        let d = Domain::from_sizes(&[2, 3, 2]).unwrap();
        let data = latent_class_sample(&d, 50, 2, seed).unwrap();
        let cache = OperatorCache::new(&d);
        let delta = 10f64.powf(log_delta);
        let mut cfg = MwemConfig::new(all_k_way(3, 2), rounds, eps, delta, seed);
        cfg.alpha = alpha;
        let run = run_scalable_mwem(&data, &cache, &cfg).unwrap();
        let rho = solve_rho(eps, delta).unwrap();
        prop_assert!((run.accountant.rho_spent() - rho).abs() <= 1e-12 * rho.max(1.0));
    }
}

/// Noisy residual estimates for every clique of the closure except `skip`.
fn lnn_inputs(
    d: &Domain,
    w: &[Clique],
    seed: u64,
    sigma: f64,
    skip: &[Clique],
) -> BTreeMap<Clique, CombinedResidual<f64>> {
    let data = latent_class_sample(d, 30, 2, seed).unwrap();
    let cache = OperatorCache::<f64>::new(d);
    use rand::Rng;
    let mut rng = stream_rng(seed, 9);
    downward_closure(w)
        .into_iter()
        .filter(|t| !skip.contains(t))
        .map(|t| {
            let exact = data.exact_marginal::<f64>(&t).unwrap();
            let alpha = cache
                .difference_op(&t)
                .unwrap()
                .apply(&exact.values)
                .unwrap();
            let values = alpha
                .iter()
                .map(|a| a + sigma * rng.random_range(-1.0..1.0))
                .collect();
            (
                t.clone(),
                CombinedResidual {
                    residual: ResidualVector { clique: t, values },
                    variance: sigma * sigma,
                    count: 1,
                },
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lnn_output_is_nonnegative_and_consistent(seed in any::<u64>(), sigma in 1.0f64..40.0) {
        let d = Domain::from_sizes(&[2, 3, 2]).unwrap();
        let cache = OperatorCache::<f64>::new(&d);
        let w = all_k_way(3, 2);
        let est = lnn_inputs(&d, &w, seed, sigma, &[]);
        let sol = grem_lnn(&cache, &w, &est, &LnnConfig::residualplanner()).unwrap();
        prop_assume!(sol.report.converged);
        let total = sol.state.alpha[&Clique::empty()][0];
        for t in sol.marginals.values() {
            prop_assert!(t.values.iter().all(|&v| v >= -1e-6 * total.abs().max(1.0)));
        }
        for g1 in &w {
            for g2 in &w {
                let shared = Clique::new(g1.iter().filter(|&k| g2.contains(k)).collect()).unwrap();
                let a = residual_from_marginal(&d, &sol.marginals[g1], &shared).unwrap();
                let b = residual_from_marginal(&d, &sol.marginals[g2], &shared).unwrap();
                let scale = total.abs().max(1.0);
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x - y).abs() <= 1e-6 * scale);
                }
            }
        }
    }

    #[test]
    fn unmeasured_residuals_shrink_as_eta_grows(seed in any::<u64>()) {
        // Binary attributes make the regularizer a multiple of the plain norm.
        let d = Domain::from_sizes(&[2, 2, 2]).unwrap();
        let cache = OperatorCache::<f64>::new(&d);
        let w = all_k_way(3, 2);
        let hole = Clique::new(vec![0, 1]).unwrap();
        let est = lnn_inputs(&d, &w, seed, 20.0, std::slice::from_ref(&hole));
        let mut prev = f64::INFINITY;
        for eta in [0.5, 2.0, 8.0, 32.0] {
            let cfg = LnnConfig { eta, max_rounds: 20_000, ..LnnConfig::residualplanner() };
            let sol = grem_lnn(&cache, &w, &est, &cfg).unwrap();
            prop_assume!(sol.report.converged);
            let norm = sol.state.alpha[&hole].iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= prev * (1.0 + 1e-6) + 1e-6, "eta {eta}: {norm} > {prev}");
            prev = norm;
        }
    }
}
