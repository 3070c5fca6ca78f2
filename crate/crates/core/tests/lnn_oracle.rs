//! Non-negative reconstruction against the dense quadratic program.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rem_core::dataset::latent_class_sample;
use rem_core::lnn::{grem_lnn, LnnConfig};
use rem_core::oracle::{residual_matrix, LnnQp};
use rem_core::privacy::stream_rng;
use rem_core::reconstruct::CombinedResidual;
use rem_core::workload::{
    all_k_way, downward_closure, Clique, Domain, OperatorCache, ResidualVector,
};

/// Noisy residuals of a small sample under the dense residual queries.
fn estimates(
    d: &Domain,
    w: &[Clique],
    seed: u64,
    sigma: f64,
    skip: &[Clique],
) -> BTreeMap<Clique, CombinedResidual<f64>> {
    let data = latent_class_sample(d, 20, 2, seed).unwrap();
    let full = Clique::new((0..d.len()).collect()).unwrap();
    let p = DVector::from_vec(data.exact_marginal::<f64>(&full).unwrap().values);
    let mut rng = stream_rng(seed, 3);
    downward_closure(w)
        .into_iter()
        .filter(|t| !skip.contains(t))
        .map(|t| {
            let exact = residual_matrix(d, &t).unwrap() * &p;
            let values = exact
                .iter()
                .map(|v| v + sigma * rng.random_range(-1.0..1.0))
                .collect();
            let e = CombinedResidual {
                residual: ResidualVector {
                    clique: t.clone(),
                    values,
                },
                variance: sigma * sigma,
                count: 1,
            };
            (t, e)
        })
        .collect()
}

fn check(skip: &[Clique], seed: u64) {
    let d = Domain::from_sizes(&[2, 3]).unwrap();
    let mut w = all_k_way(2, 1);
    w.extend(all_k_way(2, 2));
    let est = estimates(&d, &w, seed, 25.0, skip);
    let cfg = LnnConfig {
        eta: 3.0,
        max_rounds: 50_000,
        ..LnnConfig::residualplanner()
    };
    let sol = grem_lnn(&OperatorCache::new(&d), &w, &est, &cfg).unwrap();
    assert!(sol.report.converged, "{:?}", sol.report);

    let targets = est
        .iter()
        .map(|(t, e)| (t.clone(), e.residual.values.clone()))
        .collect();
    let qp = LnnQp::build(&d, &w, &targets, cfg.weight_base, cfg.eta).unwrap();
    let x_star = qp.solve(200_000).unwrap();
    let x = qp.stack(&sol.state.alpha);
    let f_star = qp.objective(&x_star);
    let f = qp.objective(&x);
    let tol = 1e-3 * f_star.abs().max(1.0);
    assert!((f - f_star).abs() <= tol, "solver {f}, oracle {f_star}");
    let slack = (&qp.g * &x).min();
    assert!(
        slack >= -1e-6 * x[0].abs().max(1.0),
        "constraint slack {slack}"
    );
    assert!((&qp.g * &x_star).min() >= -1e-8, "oracle infeasible");
    // The constraints must actually bind for the comparison to mean anything.
    assert!(
        (&qp.g * qp.unconstrained().unwrap()).min() < -1e-3,
        "noise too small to activate constraints"
    );
}

#[test]
fn matches_dense_qp_when_every_residual_is_measured() {
    for seed in [1, 2, 3] {
        check(&[], seed);
    }
}

#[test]
fn matches_dense_qp_with_an_unmeasured_residual() {
    let hole = Clique::new(vec![0, 1]).unwrap();
    for seed in [4, 5] {
        check(std::slice::from_ref(&hole), seed);
    }
}
