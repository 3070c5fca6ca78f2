//! Residuals-to-marginals reconstruction: per-residual estimation, Gaussian
//! inverse-variance combination, marginal decomposition and efficient
//! marginal pseudoinversion.
//!
//! Every reconstruction is `mu_gamma = sum_{tau <= gamma} A_{gamma,tau} alpha_tau`
//! over one shared set of residual estimates, so overlapping marginals are
//! always mutually consistent.

mod archive;
mod measurement;

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;

pub use archive::{ArchiveRecord, MeasurementArchive, RecordKind};
pub use measurement::{MarginalMeasurement, Measurement, Provenance, ResidualMeasurement};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::workload::{downward_closure, Clique, MarginalTable, OperatorCache, ResidualVector};

/// Estimate of one residual together with its effective variance scale
/// (the estimate has covariance `variance * D_tau D_tau^T`).
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedResidual<T> {
    pub residual: ResidualVector<T>,
    pub variance: T,
    pub count: usize,
}

/// Per-residual loss minimization hook. Implementations turn all
/// measurements of one clique into a single estimate.
pub trait ResidualLoss<T: Scalar>: Sync {
    fn minimize(&self, measurements: &[ResidualMeasurement<T>]) -> Result<CombinedResidual<T>>;
}

/// Gaussian likelihood with covariances proportional to `D_tau D_tau^T`;
/// the minimizer is the inverse-variance weighted mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianLoss;

impl<T: Scalar> ResidualLoss<T> for GaussianLoss {
    fn minimize(&self, measurements: &[ResidualMeasurement<T>]) -> Result<CombinedResidual<T>> {
        grem_mle_combine(measurements)
    }
}

/// Inverse-variance weighted mean of measurements sharing one clique.
/// A single measurement is returned unchanged.
pub fn grem_mle_combine<T: Scalar>(
    measurements: &[ResidualMeasurement<T>],
) -> Result<CombinedResidual<T>> {
    let first = measurements
        .first()
        .ok_or_else(|| Error::Empty("no residual measurements to combine".into()))?;
    let tau = &first.clique;
    for z in measurements {
        if &z.clique != tau {
            return Err(Error::InvalidClique {
                attrs: z.clique.to_vec(),
                reason: format!("cannot combine with measurements of {tau}"),
            });
        }
        if z.values.len() != first.values.len() {
            return Err(Error::Shape {
                expected: first.values.len(),
                got: z.values.len(),
            });
        }
        measurement::check_scale(z.sigma2)?;
    }
    if measurements.len() == 1 {
        return Ok(CombinedResidual {
            residual: ResidualVector {
                clique: tau.clone(),
                values: first.values.clone(),
            },
            variance: first.sigma2,
            count: 1,
        });
    }
    let total: T = measurements.iter().map(|z| T::one() / z.sigma2).sum();
    let mut acc = vec![T::zero(); first.values.len()];
    for z in measurements {
        let w = T::one() / z.sigma2;
        for (a, &v) in acc.iter_mut().zip(&z.values) {
            *a = *a + w * v;
        }
    }
    for a in &mut acc {
        *a = *a / total;
    }
    Ok(CombinedResidual {
        residual: ResidualVector {
            clique: tau.clone(),
            values: acc,
        },
        variance: T::one() / total,
        count: measurements.len(),
    })
}

/// Splits an isotropic-noise marginal measurement into one residual
/// measurement per subset of its clique. The pieces have independent noise,
/// with scale `sigma2 * prod_{k in gamma \ tau} n_k`.
pub fn decompose_marginal<T: Scalar>(
    cache: &OperatorCache<T>,
    y: &MarginalMeasurement<T>,
) -> Result<Vec<ResidualMeasurement<T>>> {
    let domain = cache.domain();
    y.clique
        .subsets()
        .into_iter()
        .map(|tau| {
            let values = cache.decompose_op(&y.clique, &tau)?.apply(&y.values)?;
            let mut scale = y.sigma2;
            for k in y.clique.iter().filter(|&k| !tau.contains(k)) {
                scale = scale * T::of_usize(domain.size(k));
            }
            Ok(ResidualMeasurement {
                clique: tau,
                values,
                sigma2: scale,
                provenance: Provenance::FromMarginal(y.clique.clone()),
            })
        })
        .collect()
}

/// Groups residual measurements by clique, keeping arrival order inside
/// each group.
pub fn group_by_clique<T>(
    measurements: impl IntoIterator<Item = ResidualMeasurement<T>>,
) -> BTreeMap<Clique, Vec<ResidualMeasurement<T>>> {
    let mut groups: BTreeMap<Clique, Vec<ResidualMeasurement<T>>> = BTreeMap::new();
    for z in measurements {
        groups.entry(z.clique.clone()).or_default().push(z);
    }
    groups
}

/// Bookkeeping for one reconstructed marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaInfo<T> {
    /// `(tau, effective variance)` for every measured subset.
    pub contributing: Vec<(Clique, T)>,
    /// Subsets with no estimate; they contribute zero.
    pub missing: Vec<Clique>,
}

impl<T> GammaInfo<T> {
    pub fn is_partial(&self) -> bool {
        !self.missing.is_empty()
    }
}

/// Reconstructed workload answers plus the residual estimates behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction<T> {
    pub marginals: BTreeMap<Clique, MarginalTable<T>>,
    pub info: BTreeMap<Clique, GammaInfo<T>>,
    pub residuals: BTreeMap<Clique, CombinedResidual<T>>,
}

impl<T> Reconstruction<T> {
    /// True when some workload marginal had an unmeasured subset.
    pub fn is_partial(&self) -> bool {
        self.info.values().any(GammaInfo::is_partial)
    }
}

fn dedup(workload: &[Clique]) -> Vec<Clique> {
    workload
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// `mu_gamma = sum_tau A_{gamma,tau} alpha_tau` for every workload clique,
/// in parallel over the workload.
pub fn reconstruct_workload<T: Scalar>(
    cache: &OperatorCache<T>,
    workload: &[Clique],
    estimates: BTreeMap<Clique, CombinedResidual<T>>,
) -> Result<Reconstruction<T>> {
    for gamma in workload {
        cache.domain().check_clique(gamma)?;
    }
    let rows = dedup(workload)
        .into_par_iter()
        .map(|gamma| {
            let mut info = GammaInfo {
                contributing: Vec::new(),
                missing: Vec::new(),
            };
            let mut terms = Vec::new();
            for tau in gamma.subsets() {
                match estimates.get_key_value(&tau) {
                    Some((k, est)) => {
                        info.contributing.push((tau, est.variance));
                        terms.push((k, est.residual.values.as_slice()));
                    }
                    None => info.missing.push(tau),
                }
            }
            let table = cache.marginal_from_residuals(&gamma, terms)?;
            Ok((gamma, table, info))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut marginals = BTreeMap::new();
    let mut info = BTreeMap::new();
    for (gamma, table, i) in rows {
        marginals.insert(gamma.clone(), table);
        info.insert(gamma, i);
    }
    Ok(Reconstruction {
        marginals,
        info,
        residuals: estimates,
    })
}

/// Per-clique loss minimization followed by reconstruction.
pub fn rem_reconstruct<T: Scalar, L: ResidualLoss<T>>(
    cache: &OperatorCache<T>,
    workload: &[Clique],
    measurements: Vec<ResidualMeasurement<T>>,
    loss: &L,
) -> Result<Reconstruction<T>> {
    let estimates = estimate_residuals(measurements, loss)?;
    reconstruct_workload(cache, workload, estimates)
}

/// Per-clique estimates only, in parallel over cliques.
pub fn estimate_residuals<T: Scalar, L: ResidualLoss<T>>(
    measurements: Vec<ResidualMeasurement<T>>,
    loss: &L,
) -> Result<BTreeMap<Clique, CombinedResidual<T>>> {
    let groups: Vec<_> = group_by_clique(measurements).into_iter().collect();
    groups
        .into_par_iter()
        .map(|(tau, zs)| Ok((tau, loss.minimize(&zs)?)))
        .collect()
}

/// Gaussian maximum-likelihood reconstruction from residual measurements.
pub fn grem_mle<T: Scalar>(
    cache: &OperatorCache<T>,
    workload: &[Clique],
    measurements: Vec<ResidualMeasurement<T>>,
) -> Result<Reconstruction<T>> {
    rem_reconstruct(cache, workload, measurements, &GaussianLoss)
}

/// Decomposes marginals and passes residuals through, preserving order.
pub fn residual_measurements<T: Scalar>(
    cache: &OperatorCache<T>,
    measurements: &[Measurement<T>],
) -> Result<Vec<ResidualMeasurement<T>>> {
    let parts = measurements
        .par_iter()
        .map(|m| match m {
            Measurement::Marginal(y) => decompose_marginal(cache, y),
            Measurement::Residual(z) => Ok(vec![z.clone()]),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Reconstruction from any mix of marginal and residual measurements.
pub fn reconstruct_measurements<T: Scalar>(
    cache: &OperatorCache<T>,
    workload: &[Clique],
    measurements: &[Measurement<T>],
) -> Result<Reconstruction<T>> {
    grem_mle(cache, workload, residual_measurements(cache, measurements)?)
}

/// Efficient marginal pseudoinversion: equals `M_gamma M_Q^+ y` when all
/// marginals share one noise scale, and the variance-weighted
/// pseudoinverse otherwise. With no measurements every table is zero and
/// the result is marked partial.
pub fn emp_reconstruct<T: Scalar>(
    cache: &OperatorCache<T>,
    workload: &[Clique],
    marginals: &[MarginalMeasurement<T>],
) -> Result<Reconstruction<T>> {
    let wrapped: Vec<Measurement<T>> = marginals
        .iter()
        .cloned()
        .map(Measurement::Marginal)
        .collect();
    reconstruct_measurements(cache, workload, &wrapped)
}

/// Reconstruction from one residual measurement per clique of the
/// downward closure. Missing cliques contribute zero and are logged.
pub fn residualplanner_reconstruct<T: Scalar>(
    cache: &OperatorCache<T>,
    workload: &[Clique],
    residuals: &[ResidualMeasurement<T>],
) -> Result<Reconstruction<T>> {
    let measured: BTreeSet<&Clique> = residuals.iter().map(|z| &z.clique).collect();
    let missing: Vec<String> = downward_closure(workload)
        .iter()
        .filter(|tau| !measured.contains(tau))
        .map(ToString::to_string)
        .collect();
    if !missing.is_empty() {
        warn!(
            "{} residual(s) in the downward closure are unmeasured and treated as zero: {}",
            missing.len(),
            missing.join(", ")
        );
    }
    grem_mle(cache, workload, residuals.to_vec())
}

/// Replays an archive through the same pipeline a run used.
pub fn replay_archive(
    cache: &OperatorCache<f64>,
    workload: &[Clique],
    archive: &MeasurementArchive,
) -> Result<Reconstruction<f64>> {
    let measurements = archive.measurements(cache.domain())?;
    reconstruct_measurements(cache, workload, &measurements)
}
