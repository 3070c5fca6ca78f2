use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::workload::{Clique, Domain};

/// Where a residual measurement came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Direct,
    /// Extracted from a noisy marginal on this clique.
    FromMarginal(Clique),
}

/// `z_tau = R_tau p + N(0, sigma2 D_tau D_tau^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMeasurement<T> {
    pub clique: Clique,
    pub values: Vec<T>,
    pub sigma2: T,
    pub provenance: Provenance,
}

impl<T: Scalar> ResidualMeasurement<T> {
    pub fn new(domain: &Domain, clique: Clique, values: Vec<T>, sigma2: T) -> Result<Self> {
        domain.check_clique(&clique)?;
        check_scale(sigma2)?;
        let m = domain.residual_len(&clique);
        if values.len() != m {
            return Err(Error::Shape {
                expected: m,
                got: values.len(),
            });
        }
        Ok(Self {
            clique,
            values,
            sigma2,
            provenance: Provenance::Direct,
        })
    }
}

/// `y_gamma = M_gamma p + N(0, sigma2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMeasurement<T> {
    pub clique: Clique,
    pub values: Vec<T>,
    pub sigma2: T,
}

impl<T: Scalar> MarginalMeasurement<T> {
    pub fn new(domain: &Domain, clique: Clique, values: Vec<T>, sigma2: T) -> Result<Self> {
        domain.check_clique(&clique)?;
        check_scale(sigma2)?;
        let n = domain.marginal_len(&clique);
        if values.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: values.len(),
            });
        }
        Ok(Self {
            clique,
            values,
            sigma2,
        })
    }
}

pub(crate) fn check_scale<T: Scalar>(sigma2: T) -> Result<()> {
    if sigma2 > T::zero() && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "measurement scale must be positive and finite, got {sigma2:?}"
        )))
    }
}

/// Either kind of measurement, as stored in an archive.
#[derive(Debug, Clone, PartialEq)]
pub enum Measurement<T> {
    Marginal(MarginalMeasurement<T>),
    Residual(ResidualMeasurement<T>),
}
