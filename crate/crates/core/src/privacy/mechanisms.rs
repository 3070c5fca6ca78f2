//! Noise-adding primitives. Each one charges the accountant before any
//! randomness is drawn.

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PrivacyAccountant;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::kron::FactorKind;
use crate::workload::{difference_op, Clique, Domain, ResidualVector};

/// Noise family attached to a measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseDescriptor {
    /// `N(0, sigma2 I)`.
    IsotropicGaussian { sigma2: f64 },
    /// `N(0, sigma2 D_tau D_tau^T)`.
    ResidualCovGaussian { sigma2: f64, clique: Clique },
}

impl NoiseDescriptor {
    pub fn sigma2(&self) -> f64 {
        match self {
            NoiseDescriptor::IsotropicGaussian { sigma2 }
            | NoiseDescriptor::ResidualCovGaussian { sigma2, .. } => *sigma2,
        }
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "noise variance must be positive, got {sigma2}"
        )))
    }
}

/// zCDP cost of the Gaussian mechanism on an l2-sensitivity-1 query.
pub fn gaussian_cost(sigma2: f64) -> f64 {
    1.0 / (2.0 * sigma2)
}

/// `answer + N(0, sigma2 I)`, charging `1 / (2 sigma2)`.
pub fn gaussian_measure<R: Rng + ?Sized>(
    answer: &[f64],
    sigma2: f64,
    rng: &mut R,
    accountant: &mut PrivacyAccountant,
    label: &str,
) -> Result<Vec<f64>> {
    check_sigma2(sigma2)?;
    accountant.spend(label, gaussian_cost(sigma2))?;
    let sigma = sigma2.sqrt();
    Ok(answer
        .iter()
        .map(|&a| a + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>())
}

/// Largest diagonal entry of `D^T (D D^T)^{-1} D` for one attribute, from
/// the small dense factor.
pub fn residual_projection_diag_max(n: usize) -> Result<f64> {
    let d: DenseMatrix<f64> = FactorKind::<f64>::Diff(n).dense();
    let gram_inv = d.matmul(&d.transpose())?.inverse()?;
    let proj = d.transpose().matmul(&gram_inv)?.matmul(&d)?;
    Ok(proj
        .diagonal()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// zCDP cost `gamma / 2` of measuring `R_tau` with covariance
/// `sigma2 D_tau D_tau^T`, where `gamma` is the largest diagonal entry of
/// `R_tau^T Sigma^{-1} R_tau`. The diagonal factorizes over attributes:
/// the ones-row factors outside tau contribute 1.
pub fn residual_cov_cost(domain: &Domain, tau: &Clique, sigma2: f64) -> Result<f64> {
    domain.check_clique(tau)?;
    let mut g = 1.0 / sigma2;
    for k in tau.iter() {
        g *= residual_projection_diag_max(domain.size(k))?;
    }
    Ok(g / 2.0)
}

/// Inverse of [`residual_cov_cost`]: the variance that costs exactly `rho`.
pub fn residual_cov_sigma2_for(domain: &Domain, tau: &Clique, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Config(format!(
            "per-residual budget must be positive, got {rho}"
        )));
    }
    if domain.residual_len(tau) == 0 {
        // Nothing to release: any variance is free, so keep unit scale.
        return Ok(1.0);
    }
    Ok(residual_cov_cost(domain, tau, 1.0)? / rho)
}

/// `alpha + sigma D_tau g` with `g ~ N(0, I)`, so the noise covariance is
/// exactly `sigma2 D_tau D_tau^T`.
pub fn residual_cov_measure<R: Rng + ?Sized>(
    domain: &Domain,
    alpha: &ResidualVector<f64>,
    sigma2: f64,
    rng: &mut R,
    accountant: &mut PrivacyAccountant,
    label: &str,
) -> Result<ResidualVector<f64>> {
    check_sigma2(sigma2)?;
    let cost = residual_cov_cost(domain, &alpha.clique, sigma2)?;
    accountant.spend(label, cost)?;
    Ok(ResidualVector {
        clique: alpha.clique.clone(),
        values: add_residual_noise(domain, &alpha.clique, &alpha.values, sigma2, rng)?,
    })
}

/// Adds `N(0, sigma2 D_tau D_tau^T)` noise without touching an accountant.
pub fn add_residual_noise<R: Rng + ?Sized>(
    domain: &Domain,
    tau: &Clique,
    values: &[f64],
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = difference_op::<f64>(domain, tau)?;
    let sigma = sigma2.sqrt();
    let g: Vec<f64> = (0..d.in_len())
        .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let xi = d.apply(&g)?;
    if xi.len() != values.len() {
        return Err(Error::Shape {
            expected: xi.len(),
            got: values.len(),
        });
    }
    Ok(values.iter().zip(xi).map(|(a, e)| a + e).collect())
}

/// zCDP cost of one exponential-mechanism selection.
pub fn exponential_cost(eps: f64) -> f64 {
    eps * eps / 8.0
}

/// Samples a candidate with probability proportional to
/// `exp(eps * score / (2 sensitivity))` via the Gumbel-max trick, charging
/// `eps^2 / 8`.
pub fn exponential_select<K: Clone, R: Rng + ?Sized>(
    scores: &[(K, f64)],
    eps: f64,
    sensitivity: f64,
    rng: &mut R,
    accountant: &mut PrivacyAccountant,
    label: &str,
) -> Result<K> {
    if scores.is_empty() {
        return Err(Error::Empty(
            "exponential mechanism needs at least one candidate".into(),
        ));
    }
    if !(eps > 0.0) || !(sensitivity > 0.0) {
        return Err(Error::Config(format!(
            "need eps > 0 and sensitivity > 0, got {eps}, {sensitivity}"
        )));
    }
    accountant.spend(label, exponential_cost(eps))?;
    let scale = eps / (2.0 * sensitivity);
    let mut best = 0;
    let mut best_key = f64::NEG_INFINITY;
    for (i, (_, s)) in scores.iter().enumerate() {
        let u: f64 = Open01.sample(rng);
        let key = scale * s - (-u.ln()).ln();
        if key > best_key {
            best_key = key;
            best = i;
        }
    }
    Ok(scores[best].0.clone())
}
