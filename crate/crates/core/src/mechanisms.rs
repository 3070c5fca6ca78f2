//! End-to-end private pipelines: residual measurement with correlated
//! Gaussian noise, and Scalable MWEM with pseudoinverse reconstruction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RecordSet;
use crate::error::{Error, Result};
use crate::evaluate::{trunc, trunc_rescale};
use crate::lnn::{grem_lnn, LnnConfig, SolveReport};
use crate::privacy::{
    exponential_select, gaussian_measure, residual_cov_cost, residual_cov_measure,
    residual_cov_sigma2_for, solve_rho, stream_rng, PrivacyAccountant, BUDGET_SLACK,
};
use crate::reconstruct::{
    emp_reconstruct, replay_archive, residualplanner_reconstruct, MarginalMeasurement,
    MeasurementArchive, Reconstruction, ResidualMeasurement,
};
use crate::workload::{
    downward_closure, Clique, Domain, MarginalTable, OperatorCache, ResidualVector,
};

/// Post-processing applied to a mechanism's reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Postprocessor {
    None,
    Trunc,
    TruncRescale,
    Lnn,
}

impl Postprocessor {
    pub const ALL: [Postprocessor; 4] = [Self::None, Self::Trunc, Self::TruncRescale, Self::Lnn];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Trunc => "trunc",
            Self::TruncRescale => "trunc+rescale",
            Self::Lnn => "lnn",
        }
    }

    pub fn apply(
        self,
        cache: &OperatorCache<f64>,
        workload: &[Clique],
        rec: &Reconstruction<f64>,
        lnn: &LnnConfig,
    ) -> Result<Processed> {
        let map = |f: fn(&MarginalTable<f64>) -> MarginalTable<f64>| {
            rec.marginals
                .iter()
                .map(|(k, t)| (k.clone(), f(t)))
                .collect()
        };
        Ok(match self {
            Self::None => Processed {
                marginals: rec.marginals.clone(),
                report: None,
            },
            Self::Trunc => Processed {
                marginals: map(trunc),
                report: None,
            },
            Self::TruncRescale => Processed {
                marginals: map(trunc_rescale),
                report: None,
            },
            Self::Lnn => {
                let sol = grem_lnn(cache, workload, &rec.residuals, lnn)?;
                Processed {
                    marginals: sol.marginals,
                    report: Some(sol.report),
                }
            }
        })
    }
}

impl fmt::Display for Postprocessor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Postprocessor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "trunc" => Ok(Self::Trunc),
            "trunc+rescale" | "trunc-rescale" | "truncrescale" => Ok(Self::TruncRescale),
            "lnn" | "grem-lnn" => Ok(Self::Lnn),
            other => Err(Error::Config(format!("unknown postprocessor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Processed {
    pub marginals: BTreeMap<Clique, MarginalTable<f64>>,
    /// Present for the non-negative reconstruction only.
    pub report: Option<SolveReport>,
}

impl Processed {
    pub fn converged(&self) -> bool {
        self.report.as_ref().is_none_or(|r| r.converged)
    }
}

fn check_domain(data: &RecordSet, cache: &OperatorCache<f64>) -> Result<()> {
    if data.domain() == cache.domain() {
        Ok(())
    } else {
        Err(Error::InvalidDomain(
            "dataset and operator cache use different domains".into(),
        ))
    }
}

fn check_workload(domain: &Domain, workload: &[Clique]) -> Result<()> {
    if workload.is_empty() {
        return Err(Error::Empty("workload".into()));
    }
    workload.iter().try_for_each(|g| domain.check_clique(g))
}

/// How residual noise variances are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseScales {
    /// Split the budget equally over the downward closure.
    UniformSplit,
    /// Explicit `sigma2` for every clique of the downward closure.
    PerClique(BTreeMap<Clique, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPlannerConfig {
    pub workload: Vec<Clique>,
    pub rho: f64,
    pub scales: NoiseScales,
    pub seed: u64,
    /// Skip noise and accounting; for testing only.
    pub noiseless: bool,
}

#[derive(Debug, Clone)]
pub struct MechanismRun<M> {
    pub archive: MeasurementArchive,
    pub reconstruction: Reconstruction<f64>,
    pub accountant: PrivacyAccountant,
    pub manifest: M,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualManifest {
    pub seed: u64,
    pub rho: f64,
    /// `(clique names, sigma2, zCDP cost)` in measurement order.
    pub measurements: Vec<(Vec<String>, f64, f64)>,
    pub rho_spent: f64,
}

/// Variances for every clique of the downward closure, checked against
/// the budget. Infeasible scales are refused with the per-clique costs.
pub fn residual_scales(
    domain: &Domain,
    workload: &[Clique],
    rho: f64,
    scales: &NoiseScales,
) -> Result<Vec<(Clique, f64, f64)>> {
    let taus: Vec<Clique> = downward_closure(workload).into_iter().collect();
    // Residuals over a single-category attribute are empty and cost nothing.
    let nonempty = taus
        .iter()
        .filter(|t| domain.residual_len(t) > 0)
        .count()
        .max(1);
    let per = rho / nonempty as f64;
    let mut out = Vec::with_capacity(taus.len());
    for tau in taus {
        let sigma2 = match scales {
            NoiseScales::UniformSplit => residual_cov_sigma2_for(domain, &tau, per)?,
            NoiseScales::PerClique(map) => *map
                .get(&tau)
                .ok_or_else(|| Error::Config(format!("no noise scale given for residual {tau}")))?,
        };
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Config(format!(
                "noise scale for {tau} must be positive"
            )));
        }
        let cost = match scales {
            NoiseScales::UniformSplit if domain.residual_len(&tau) == 0 => 0.0,
            NoiseScales::UniformSplit => per,
            NoiseScales::PerClique(_) => residual_cov_cost(domain, &tau, sigma2)?,
        };
        out.push((tau, sigma2, cost));
    }
    let requested: f64 = out.iter().map(|x| x.2).sum();
    if requested > rho + BUDGET_SLACK {
        return Err(Error::InfeasibleBudget {
            requested,
            available: rho,
            breakdown: out
                .iter()
                .map(|(t, _, c)| (domain.clique_names(t).join(","), *c))
                .collect(),
        });
    }
    Ok(out)
}

/// Measures every residual of the downward closure once with covariance
/// `sigma2_tau D_tau D_tau^T`, then reconstructs the workload.
pub fn run_residualplanner_style(
    data: &RecordSet,
    cache: &OperatorCache<f64>,
    config: &ResidualPlannerConfig,
) -> Result<MechanismRun<ResidualManifest>> {
    check_domain(data, cache)?;
    let domain = cache.domain();
    check_workload(domain, &config.workload)?;
    if !(config.rho > 0.0) {
        return Err(Error::Config(format!(
            "rho must be positive, got {}",
            config.rho
        )));
    }
    let plan = residual_scales(domain, &config.workload, config.rho, &config.scales)?;
    let mut accountant = PrivacyAccountant::new(config.rho)?;
    let mut archive = MeasurementArchive::new();
    let mut measurements = Vec::with_capacity(plan.len());
    let mut manifest = ResidualManifest {
        seed: config.seed,
        rho: config.rho,
        measurements: Vec::new(),
        rho_spent: 0.0,
    };
    for (stream, (tau, sigma2, cost)) in plan.into_iter().enumerate() {
        let exact = data.exact_marginal::<f64>(&tau)?;
        let alpha = ResidualVector {
            clique: tau.clone(),
            values: cache.difference_op(&tau)?.apply(&exact.values)?,
        };
        let label = format!("residual {}", domain.clique_names(&tau).join(","));
        let noisy = if config.noiseless {
            alpha
        } else {
            let mut rng = stream_rng(config.seed, stream as u64);
            residual_cov_measure(domain, &alpha, sigma2, &mut rng, &mut accountant, &label)?
        };
        let z = ResidualMeasurement::new(domain, tau.clone(), noisy.values, sigma2)?;
        archive.push_residual(domain, &z);
        manifest.measurements.push((
            domain.clique_names(&tau),
            sigma2,
            if config.noiseless { 0.0 } else { cost },
        ));
        measurements.push(z);
    }
    manifest.rho_spent = accountant.rho_spent();
    let reconstruction = residualplanner_reconstruct(cache, &config.workload, &measurements)?;
    Ok(MechanismRun {
        archive,
        reconstruction,
        accountant,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwemConfig {
    pub workload: Vec<Clique>,
    pub rounds: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Fraction of the budget spent on the total query.
    pub alpha: f64,
    pub seed: u64,
    /// Rebuild each round's reconstruction from a JSON round trip of the
    /// archive and fail on any difference; for testing.
    pub verify_replay: bool,
}

impl MwemConfig {
    pub fn new(workload: Vec<Clique>, rounds: usize, epsilon: f64, delta: f64, seed: u64) -> Self {
        Self {
            workload,
            rounds,
            epsilon,
            delta,
            alpha: 0.1,
            seed,
            verify_replay: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workload.is_empty() {
            return Err(Error::Empty("workload".into()));
        }
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwemRound {
    pub round: usize,
    pub selected: Vec<String>,
    pub select_rho: f64,
    pub measure_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwemManifest {
    pub workload: Vec<Vec<String>>,
    pub rounds: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub seed: u64,
    pub rho: f64,
    pub sigma2_total: f64,
    pub sigma2: f64,
    pub eps_select: f64,
    pub history: Vec<MwemRound>,
    pub rho_spent: f64,
}

/// Scalable MWEM: measure the total, then repeatedly select the worst
/// approximated workload marginal with the exponential mechanism, measure
/// it with Gaussian noise and re-run pseudoinverse reconstruction on every
/// measurement so far.
///
/// Stream 0 draws the total; round `t` selects on stream `2t - 1` and
/// measures on stream `2t`.
pub fn run_scalable_mwem(
    data: &RecordSet,
    cache: &OperatorCache<f64>,
    config: &MwemConfig,
) -> Result<MechanismRun<MwemManifest>> {
    config.validate()?;
    check_domain(data, cache)?;
    let domain = cache.domain();
    check_workload(domain, &config.workload)?;
    let workload: Vec<Clique> = config
        .workload
        .iter()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let rho = solve_rho(config.epsilon, config.delta)?;
    let t = config.rounds as f64;
    let sigma2_total = 1.0 / (2.0 * config.alpha * rho);
    let sigma2 = t / ((1.0 - config.alpha) * rho);
    let eps_select = 2.0 * ((1.0 - config.alpha) * rho / t).sqrt();
    let mut accountant = PrivacyAccountant::new(rho)?;
    let mut archive = MeasurementArchive::new();
    let mut measured: Vec<MarginalMeasurement<f64>> = Vec::new();

    let total = data.exact_marginal::<f64>(&Clique::empty())?;
    let y0 = gaussian_measure(
        &total.values,
        sigma2_total,
        &mut stream_rng(config.seed, 0),
        &mut accountant,
        "total",
    )?;
    let m0 = MarginalMeasurement::new(domain, Clique::empty(), y0, sigma2_total)?;
    archive.push_marginal(domain, &m0);
    measured.push(m0);

    let exact: Vec<MarginalTable<f64>> = workload
        .par_iter()
        .map(|g| data.exact_marginal(g))
        .collect::<Result<_>>()?;
    let mut rec = emp_reconstruct(cache, &workload, &measured)?;
    let mut history = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let scores: Vec<(usize, f64)> = workload
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let est = &rec.marginals[g].values;
                let l1 = exact[i]
                    .values
                    .iter()
                    .zip(est)
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                (i, l1)
            })
            .collect();
        let before = accountant.rho_spent();
        let pick = exponential_select(
            &scores,
            eps_select,
            1.0,
            &mut stream_rng(config.seed, 2 * round as u64 - 1),
            &mut accountant,
            &format!("select round {round}"),
        )?;
        let mid = accountant.rho_spent();
        let gamma = &workload[pick];
        let y = gaussian_measure(
            &exact[pick].values,
            sigma2,
            &mut stream_rng(config.seed, 2 * round as u64),
            &mut accountant,
            &format!("measure round {round}"),
        )?;
        let m = MarginalMeasurement::new(domain, gamma.clone(), y, sigma2)?;
        archive.push_marginal(domain, &m);
        measured.push(m);
        rec = emp_reconstruct(cache, &workload, &measured)?;
        if config.verify_replay {
            let copy = MeasurementArchive::from_json(&archive.to_json()?)?;
            let again = replay_archive(cache, &workload, &copy)?;
            if again != rec {
                return Err(Error::Numeric(format!(
                    "round {round}: replayed reconstruction differs"
                )));
            }
        }
        history.push(MwemRound {
            round,
            selected: domain.clique_names(gamma),
            select_rho: mid - before,
            measure_rho: accountant.rho_spent() - mid,
        });
    }
    let manifest = MwemManifest {
        workload: workload.iter().map(|g| domain.clique_names(g)).collect(),
        rounds: config.rounds,
        epsilon: config.epsilon,
        delta: config.delta,
        alpha: config.alpha,
        seed: config.seed,
        rho,
        sigma2_total,
        sigma2,
        eps_select,
        history,
        rho_spent: accountant.rho_spent(),
    };
    Ok(MechanismRun {
        archive,
        reconstruction: rec,
        accountant,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::latent_class_sample;
    use crate::workload::all_k_way;

    fn data(sizes: &[usize], rows: usize, seed: u64) -> RecordSet {
        latent_class_sample(&Domain::from_sizes(sizes).unwrap(), rows, 3, seed).unwrap()
    }

    #[test]
    fn postprocessor_names_round_trip() {
        for p in Postprocessor::ALL {
            assert_eq!(p.name().parse::<Postprocessor>().unwrap(), p);
        }
        assert!("bogus".parse::<Postprocessor>().is_err());
    }

    #[test]
    fn noiseless_residuals_give_exact_marginals() {
        let ds = data(&[2, 3, 2], 200, 1);
        let cache = OperatorCache::new(ds.domain());
        let w = all_k_way(3, 2);
        let cfg = ResidualPlannerConfig {
            workload: w.clone(),
            rho: 1.0,
            scales: NoiseScales::UniformSplit,
            seed: 0,
            noiseless: true,
        };
        let run = run_residualplanner_style(&ds, &cache, &cfg).unwrap();
        assert_eq!(run.accountant.rho_spent(), 0.0);
        for g in &w {
            let exact = ds.exact_marginal::<f64>(g).unwrap();
            for (a, b) in run.reconstruction.marginals[g]
                .values
                .iter()
                .zip(&exact.values)
            {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_category_attributes_have_empty_residuals() {
        let ds = data(&[2, 1, 3], 120, 5);
        let cache = OperatorCache::new(ds.domain());
        let w = all_k_way(3, 2);
        let cfg = ResidualPlannerConfig {
            workload: w.clone(),
            rho: 1.0,
            scales: NoiseScales::UniformSplit,
            seed: 0,
            noiseless: true,
        };
        let run = run_residualplanner_style(&ds, &cache, &cfg).unwrap();
        for g in &w {
            let exact = ds.exact_marginal::<f64>(g).unwrap();
            for (a, b) in run.reconstruction.marginals[g]
                .values
                .iter()
                .zip(&exact.values)
            {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let noisy =
            run_scalable_mwem(&ds, &cache, &MwemConfig::new(w.clone(), 3, 1.0, 1e-6, 2)).unwrap();
        let out = Postprocessor::Lnn
            .apply(&cache, &w, &noisy.reconstruction, &LnnConfig::mwem())
            .unwrap();
        assert_eq!(out.marginals.len(), w.len());
    }

    #[test]
    fn uniform_split_spends_exactly_rho() {
        let ds = data(&[2, 3, 2], 100, 2);
        let cache = OperatorCache::new(ds.domain());
        let cfg = ResidualPlannerConfig {
            workload: all_k_way(3, 2),
            rho: 0.37,
            scales: NoiseScales::UniformSplit,
            seed: 4,
            noiseless: false,
        };
        let run = run_residualplanner_style(&ds, &cache, &cfg).unwrap();
        assert!((run.accountant.rho_spent() - 0.37).abs() <= 1e-12);
        assert_eq!(run.archive.len(), 7);
    }

    #[test]
    fn infeasible_scales_are_refused_with_breakdown() {
        let ds = data(&[2, 3], 50, 3);
        let cache = OperatorCache::new(ds.domain());
        let w = vec![Clique::new(vec![0, 1]).unwrap()];
        let scales = downward_closure(&w)
            .into_iter()
            .map(|t| (t, 0.01))
            .collect();
        let cfg = ResidualPlannerConfig {
            workload: w,
            rho: 1.0,
            scales: NoiseScales::PerClique(scales),
            seed: 0,
            noiseless: false,
        };
        match run_residualplanner_style(&ds, &cache, &cfg) {
            Err(Error::InfeasibleBudget {
                breakdown,
                requested,
                ..
            }) => {
                assert_eq!(breakdown.len(), 4);
                assert!(requested > 1.0);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn mwem_single_marginal_forced_selection() {
        let ds = data(&[2, 3], 80, 5);
        let cache = OperatorCache::new(ds.domain());
        let w = vec![Clique::new(vec![0, 1]).unwrap()];
        let mut cfg = MwemConfig::new(w.clone(), 1, 1.0, 1e-6, 11);
        cfg.verify_replay = true;
        let run = run_scalable_mwem(&ds, &cache, &cfg).unwrap();
        assert_eq!(run.manifest.history[0].selected, vec!["a0", "a1"]);
        let rho = run.manifest.rho;
        assert!((run.manifest.sigma2 - 1.0 / (0.9 * rho)).abs() < 1e-9 * run.manifest.sigma2);
        assert!((run.accountant.rho_spent() - rho).abs() <= 1e-12);
    }

    #[test]
    fn mwem_rejects_bad_config() {
        let ds = data(&[2, 3], 10, 5);
        let cache = OperatorCache::new(ds.domain());
        let mut cfg = MwemConfig::new(vec![], 3, 1.0, 1e-6, 0);
        assert!(run_scalable_mwem(&ds, &cache, &cfg).is_err());
        cfg.workload = all_k_way(2, 1);
        cfg.alpha = 1.0;
        assert!(run_scalable_mwem(&ds, &cache, &cfg).is_err());
    }
}
