use serde::{Deserialize, Serialize};

use super::{Clique, Domain};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense marginal over a clique, `n_gamma` cells in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable<T> {
    pub clique: Clique,
    pub values: Vec<T>,
}

/// Dense residual over a clique, `m_tau` entries in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector<T> {
    pub clique: Clique,
    pub values: Vec<T>,
}

impl<T: Scalar> MarginalTable<T> {
    pub fn new(domain: &Domain, clique: Clique, values: Vec<T>) -> Result<Self> {
        domain.check_clique(&clique)?;
        let expected = domain.marginal_len(&clique);
        if values.len() != expected {
            return Err(Error::Shape {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { clique, values })
    }

    pub fn zeros(domain: &Domain, clique: Clique) -> Self {
        let n = domain.marginal_len(&clique);
        Self {
            clique,
            values: vec![T::zero(); n],
        }
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum()
    }
}

impl<T: Scalar> ResidualVector<T> {
    pub fn new(domain: &Domain, clique: Clique, values: Vec<T>) -> Result<Self> {
        domain.check_clique(&clique)?;
        let expected = domain.residual_len(&clique);
        if values.len() != expected {
            return Err(Error::Shape {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { clique, values })
    }
}
