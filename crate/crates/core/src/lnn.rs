//! Reconstruction under local non-negativity: every workload marginal is
//! forced to be entrywise non-negative while all of them still derive from
//! one residual vector.
//!
//! Solves
//!
//! ```text
//! min  1/2 sum_{tau in S} (a_tau - z_tau)^T K_tau^{-1} (a_tau - z_tau)
//!        + eta sum_{nu unmeasured} ||A_{nu,nu} a_nu||^2
//! s.t. sum_{tau <= gamma} A_{gamma,tau} a_tau >= 0   for gamma in W
//! ```
//!
//! with `K_tau = w^{|tau|} D_tau D_tau^T`, by projected dual ascent. For a
//! fixed dual `lambda` each residual has a closed-form minimizer:
//! `a_tau = z_tau - w^{|tau|} D D^T g_tau` when measured and
//! `a_tau = -(1 / 2 eta) D D^T g_tau` otherwise, where
//! `g_tau = sum_{gamma >= tau} A_{gamma,tau}^T lambda_gamma`. Both use
//! `(A_{tau,tau}^T A_{tau,tau})^{-1} = D_tau D_tau^T`, so nothing is solved
//! densely.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron::KronOperator;
use crate::reconstruct::CombinedResidual;
use crate::workload::{
    downward_closure, residual_adjoints, residual_sum, Clique, Domain, MarginalTable, OperatorCache,
};

/// Magnitude beyond which an attempt is treated as divergent.
const DIVERGENCE_LIMIT: f64 = 1e100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnnConfig {
    pub max_rounds: usize,
    pub step: f64,
    /// Initial value of every dual entry; must be `<= 0`.
    pub dual_init: f64,
    /// Weight on unmeasured residuals; only used when some are missing.
    pub eta: f64,
    /// Base `w` of the `w^{|tau|}` residual weights.
    pub weight_base: f64,
    pub shrink_factor: f64,
    pub max_shrinks: usize,
    /// Violation tolerance relative to `max(1, total)`.
    pub violation_tol: f64,
    /// Relative change in the primal iterate regarded as stalled.
    pub change_tol: f64,
    /// Consecutive stalled rounds required for convergence.
    pub patience: usize,
    /// Bound on the total wall time across all attempts.
    pub time_limit: Option<Duration>,
}

impl LnnConfig {
    /// Settings for inputs where every residual was measured directly.
    pub fn residualplanner() -> Self {
        Self {
            max_rounds: 4000,
            step: 0.1,
            dual_init: -1.0,
            eta: 40.0,
            weight_base: 2.0,
            shrink_factor: 10f64.sqrt(),
            max_shrinks: 6,
            violation_tol: 1e-6,
            change_tol: 1e-8,
            patience: 10,
            time_limit: None,
        }
    }

    /// Settings for adaptively measured marginals.
    pub fn mwem() -> Self {
        Self {
            max_rounds: 1000,
            step: 0.02,
            ..Self::residualplanner()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.max_rounds < 1 {
            return bad("max_rounds must be at least 1".into());
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.dual_init <= 0.0) {
            return bad(format!("dual_init must be <= 0, got {}", self.dual_init));
        }
        if !(self.eta >= 0.0) {
            return bad(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(self.weight_base > 0.0) {
            return bad(format!(
                "weight_base must be positive, got {}",
                self.weight_base
            ));
        }
        if !(self.shrink_factor > 1.0) {
            return bad(format!(
                "shrink_factor must exceed 1, got {}",
                self.shrink_factor
            ));
        }
        if !(self.violation_tol > 0.0 && self.change_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }
}

impl Default for LnnConfig {
    fn default() -> Self {
        Self::residualplanner()
    }
}

/// Dual variables and the primal iterate they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// One non-positive vector per workload marginal.
    pub lambda: BTreeMap<Clique, Vec<f64>>,
    pub round: usize,
    pub alpha: BTreeMap<Clique, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Rounds run by the attempt that produced the result.
    pub rounds: usize,
    /// Rounds run across every attempt.
    pub total_rounds: usize,
    pub attempts: usize,
    pub final_step: f64,
    pub max_violation: f64,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LnnSolution {
    pub marginals: BTreeMap<Clique, MarginalTable<f64>>,
    pub state: DualState,
    pub report: SolveReport,
}

/// Projected dual step `lambda <- min(lambda + s mu, 0)`.
pub fn dual_update(lambda: &mut [f64], mu: &[f64], step: f64) {
    for (l, &m) in lambda.iter_mut().zip(mu) {
        *l = (*l + step * m).min(0.0);
    }
}

struct ResidualSlot {
    clique: Clique,
    diff: Arc<KronOperator<f64>>,
    self_op: Arc<KronOperator<f64>>,
    /// `(gamma index, A_{gamma,tau})` for every workload clique above.
    target: Option<Vec<f64>>,
    weight: f64,
}

struct MarginalSlot {
    clique: Clique,
    /// `(tau index, A_{gamma,tau})` for every subset.
    lowers: Vec<(usize, Arc<KronOperator<f64>>)>,
}

struct Problem {
    domain: Domain,
    residuals: Vec<ResidualSlot>,
    marginals: Vec<MarginalSlot>,
    tau_index: BTreeMap<Clique, usize>,
    eta: f64,
}

struct Iterate {
    alpha: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    violation: f64,
    rounds: usize,
}

enum Outcome {
    Converged(Iterate),
    Stalled(Iterate),
    Diverged,
}

impl Problem {
    fn build(
        cache: &OperatorCache<f64>,
        workload: &[Clique],
        estimates: &BTreeMap<Clique, CombinedResidual<f64>>,
        config: &LnnConfig,
    ) -> Result<Self> {
        if workload.is_empty() {
            return Err(Error::Empty(
                "workload for non-negative reconstruction".into(),
            ));
        }
        let gammas: Vec<Clique> = workload
            .iter()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let taus: Vec<Clique> = downward_closure(&gammas).into_iter().collect();
        let tau_index: BTreeMap<&Clique, usize> =
            taus.iter().enumerate().map(|(i, t)| (t, i)).collect();
        let domain = cache.domain();

        let mut residuals = Vec::with_capacity(taus.len());
        for tau in &taus {
            let target = match estimates.get(tau) {
                Some(est) => {
                    let m = domain.residual_len(tau);
                    if est.residual.values.len() != m {
                        return Err(Error::Shape {
                            expected: m,
                            got: est.residual.values.len(),
                        });
                    }
                    Some(est.residual.values.clone())
                }
                None => None,
            };
            residuals.push(ResidualSlot {
                clique: tau.clone(),
                diff: cache.difference_op(tau)?,
                self_op: cache.reconstruct_op(tau, tau)?,
                target,
                weight: config.weight_base.powi(tau.len() as i32),
            });
        }
        if config.eta == 0.0 && residuals.iter().any(|r| r.target.is_none()) {
            return Err(Error::Config(
                "eta must be positive when some residuals are unmeasured".into(),
            ));
        }
        let marginals = gammas
            .iter()
            .map(|gamma| {
                let lowers = gamma
                    .subsets()
                    .into_iter()
                    .map(|tau| Ok((tau_index[&tau], cache.reconstruct_op(gamma, &tau)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MarginalSlot {
                    clique: gamma.clone(),
                    lowers,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tau_index = taus
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        Ok(Self {
            domain: domain.clone(),
            residuals,
            marginals,
            tau_index,
            eta: config.eta,
        })
    }

    fn primal(&self, lambda: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let adjoints = self
            .marginals
            .par_iter()
            .zip(lambda)
            .map(|(m, l)| residual_adjoints(&self.domain, &m.clique, l))
            .collect::<Result<Vec<_>>>()?;
        let mut grads: Vec<Vec<f64>> = self
            .residuals
            .iter()
            .map(|r| vec![0.0; r.diff.out_len()])
            .collect();
        for parts in adjoints {
            for (tau, v) in parts {
                let g = &mut grads[self.tau_index[&tau]];
                g.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
        }
        self.residuals
            .par_iter()
            .zip(grads)
            .map(|(r, g)| {
                let dg = r.diff.apply(&r.diff.apply_transpose(&g)?)?;
                Ok(match &r.target {
                    Some(z) => z.iter().zip(&dg).map(|(z, d)| z - r.weight * d).collect(),
                    None => {
                        let c = -1.0 / (2.0 * self.eta);
                        dg.iter().map(|d| c * d).collect()
                    }
                })
            })
            .collect()
    }

    fn marginals(&self, alpha: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.marginals
            .par_iter()
            .map(|m| {
                residual_sum(&self.domain, &m.clique, |tau| {
                    self.tau_index.get(tau).map(|&i| alpha[i].as_slice())
                })
            })
            .collect()
    }

    fn total(&self, alpha: &[Vec<f64>]) -> f64 {
        // The downward closure of a nonempty workload starts with the empty clique.
        alpha
            .first()
            .and_then(|a| a.first())
            .copied()
            .unwrap_or(0.0)
    }

    fn objective(&self, alpha: &[Vec<f64>]) -> Result<f64> {
        let mut f = 0.0;
        for (r, a) in self.residuals.iter().zip(alpha) {
            match &r.target {
                Some(z) => {
                    let diff: Vec<f64> = a.iter().zip(z).map(|(a, z)| a - z).collect();
                    let y = r.self_op.apply(&diff)?;
                    f += 0.5 * y.iter().map(|v| v * v).sum::<f64>() / r.weight;
                }
                None => {
                    let y = r.self_op.apply(a)?;
                    f += self.eta * y.iter().map(|v| v * v).sum::<f64>();
                }
            }
        }
        Ok(f)
    }

    fn attempt(&self, config: &LnnConfig, step: f64, deadline: Option<Instant>) -> Result<Outcome> {
        let mut lambda: Vec<Vec<f64>> = self
            .marginals
            .iter()
            .map(|m| vec![config.dual_init; m.lowers[0].1.out_len()])
            .collect();
        let mut prev: Option<Vec<Vec<f64>>> = None;
        let mut calm = 0usize;
        for round in 1..=config.max_rounds {
            let alpha = self.primal(&lambda)?;
            let mu = self.marginals(&alpha)?;
            let finite = alpha.iter().chain(&mu).flatten().all(|v| v.is_finite());
            if !finite {
                return Ok(Outcome::Diverged);
            }
            let violation = mu.iter().flatten().fold(0.0f64, |m, &v| m.max(-v));
            let scale = self.total(&alpha).abs().max(1.0);
            let change = match &prev {
                None => f64::INFINITY,
                Some(p) => {
                    let mut num = 0.0f64;
                    let mut den = 0.0f64;
                    for (a, b) in alpha.iter().flatten().zip(p.iter().flatten()) {
                        num = num.max((a - b).abs());
                        den = den.max(a.abs());
                    }
                    num / den.max(1.0)
                }
            };
            calm = if change <= config.change_tol {
                calm + 1
            } else {
                0
            };
            if violation <= config.violation_tol * scale && calm >= config.patience {
                return Ok(Outcome::Converged(Iterate {
                    alpha,
                    mu,
                    lambda,
                    violation,
                    rounds: round,
                }));
            }
            let out_of_time = deadline.is_some_and(|d| Instant::now() >= d);
            if round == config.max_rounds || out_of_time {
                return Ok(Outcome::Stalled(Iterate {
                    alpha,
                    mu,
                    lambda,
                    violation,
                    rounds: round,
                }));
            }
            for (l, m) in lambda.iter_mut().zip(&mu) {
                dual_update(l, m, step);
            }
            if lambda
                .iter()
                .flatten()
                .any(|l| !(l.abs() < DIVERGENCE_LIMIT))
            {
                return Ok(Outcome::Diverged);
            }
            prev = Some(alpha);
        }
        unreachable!("the final round always returns")
    }
}

/// Non-negative reconstruction of `workload` from per-clique residual
/// estimates. Estimates for cliques outside the workload's downward closure
/// are ignored; cliques inside it without an estimate are regularized by
/// `eta`.
///
/// Attempts that diverge or stop without converging are retried with the
/// step divided by `shrink_factor`. When every attempt fails the finite
/// final iterate with the smallest violation is returned, flagged as not
/// converged.
pub fn grem_lnn(
    cache: &OperatorCache<f64>,
    workload: &[Clique],
    estimates: &BTreeMap<Clique, CombinedResidual<f64>>,
    config: &LnnConfig,
) -> Result<LnnSolution> {
    config.validate()?;
    let problem = Problem::build(cache, workload, estimates, config)?;
    let deadline = config.time_limit.map(|t| Instant::now() + t);
    let mut step = config.step;
    let mut best: Option<(Iterate, f64)> = None;
    let mut total_rounds = 0;
    let mut attempts = 0;
    let mut converged = None;
    for _ in 0..=config.max_shrinks {
        attempts += 1;
        match problem.attempt(config, step, deadline)? {
            Outcome::Converged(it) => {
                total_rounds += it.rounds;
                converged = Some((it, step));
                break;
            }
            Outcome::Stalled(it) => {
                total_rounds += it.rounds;
                debug!(
                    "attempt {attempts} at step {step:e} stopped after {} rounds, violation {:e}",
                    it.rounds, it.violation
                );
                if best
                    .as_ref()
                    .is_none_or(|(b, _)| it.violation < b.violation)
                {
                    best = Some((it, step));
                }
            }
            Outcome::Diverged => {
                total_rounds += config.max_rounds;
                debug!("attempt {attempts} at step {step:e} diverged");
            }
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        step /= config.shrink_factor;
    }
    let done = converged.is_some();
    let (it, final_step) = match converged.or(best) {
        Some(x) => x,
        None => {
            return Err(Error::Numeric(format!(
                "dual ascent diverged in all {attempts} attempts"
            )))
        }
    };
    if !done {
        info!(
            "non-negative reconstruction did not converge; returning iterate with violation {:e}",
            it.violation
        );
    }
    let objective = problem.objective(&it.alpha)?;
    let report = SolveReport {
        rounds: it.rounds,
        total_rounds,
        attempts,
        final_step,
        max_violation: it.violation,
        objective,
        converged: done,
    };
    let marginals = problem
        .marginals
        .iter()
        .zip(it.mu)
        .map(|(m, values)| {
            (
                m.clique.clone(),
                MarginalTable {
                    clique: m.clique.clone(),
                    values,
                },
            )
        })
        .collect();
    let state = DualState {
        lambda: problem
            .marginals
            .iter()
            .map(|m| m.clique.clone())
            .zip(it.lambda)
            .collect(),
        round: it.rounds,
        alpha: problem
            .residuals
            .iter()
            .map(|r| r.clique.clone())
            .zip(it.alpha)
            .collect(),
    };
    Ok(LnnSolution {
        marginals,
        state,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::{grem_mle, ResidualMeasurement};
    use crate::workload::{all_k_way, Domain};

    #[test]
    fn dual_update_example() {
        let mut l = vec![-1.0, -1.0];
        dual_update(&mut l, &[2.0, -4.0], 0.1);
        assert!((l[0] + 0.8).abs() < 1e-12);
        assert!((l[1] + 1.4).abs() < 1e-12);
        let mut l = vec![-0.1];
        dual_update(&mut l, &[5.0], 0.1);
        assert_eq!(l, vec![0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(LnnConfig::default().validate().is_ok());
        assert_eq!(LnnConfig::mwem().max_rounds, 1000);
        let c = LnnConfig {
            dual_init: 0.5,
            ..LnnConfig::default()
        };
        assert!(c.validate().is_err());
        let c = LnnConfig {
            step: 0.0,
            ..LnnConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn inactive_constraints_recover_mle() {
        let d = Domain::from_sizes(&[2, 3]).unwrap();
        let cache = OperatorCache::new(&d);
        let exact = [4.0, 7.0, 5.0, 6.0, 9.0, 3.0];
        let w = vec![Clique::new(vec![0, 1]).unwrap()];
        let zs: Vec<ResidualMeasurement<f64>> = w[0]
            .subsets()
            .into_iter()
            .map(|tau| ResidualMeasurement {
                values: cache
                    .decompose_op(&w[0], &tau)
                    .unwrap()
                    .apply(&exact)
                    .unwrap(),
                clique: tau,
                sigma2: 1.0,
                provenance: crate::reconstruct::Provenance::Direct,
            })
            .collect();
        let mle = grem_mle(&cache, &w, zs).unwrap();
        let sol = grem_lnn(&cache, &w, &mle.residuals, &LnnConfig::default()).unwrap();
        assert!(sol.report.converged);
        for (a, b) in sol.marginals[&w[0]].values.iter().zip(exact) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(sol.state.lambda[&w[0]].iter().all(|&l| l == 0.0));
    }

    #[test]
    fn clips_negative_cells() {
        let d = Domain::from_sizes(&[2, 2]).unwrap();
        let cache = OperatorCache::new(&d);
        let w = all_k_way(2, 2);
        let y = crate::reconstruct::MarginalMeasurement::new(
            &d,
            w[0].clone(),
            vec![10.0, -3.0, 2.0, 6.0],
            1.0,
        )
        .unwrap();
        let mle = crate::reconstruct::emp_reconstruct(&cache, &w, &[y]).unwrap();
        let sol = grem_lnn(&cache, &w, &mle.residuals, &LnnConfig::default()).unwrap();
        assert!(sol.report.converged, "{:?}", sol.report);
        let t = &sol.marginals[&w[0]].values;
        assert!(t.iter().all(|&v| v >= -1e-6 * 15.0));
        assert!(t[1].abs() < 1e-4);
    }

    #[test]
    fn rejects_empty_workload() {
        let d = Domain::from_sizes(&[2]).unwrap();
        let cache = OperatorCache::new(&d);
        assert!(grem_lnn(&cache, &[], &BTreeMap::new(), &LnnConfig::default()).is_err());
    }
}
