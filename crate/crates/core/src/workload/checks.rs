use super::{Clique, Domain};
use crate::dense::DenseMatrix;
use crate::error::Result;
use crate::kron::{FactorKind, KronOperator, DEFAULT_DENSE_GUARD};

/// Outcome of the dense residual row-space checks for a pair of cliques.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSpaceReport {
    /// max |R_tau R_other^T|, when the cliques differ.
    pub residual_cross: Option<f64>,
    /// max |R_tau M_other^T|, when tau is not a subset of `other`.
    pub marginal_cross: Option<f64>,
    pub rank: usize,
    pub residual_len: usize,
}

impl RowSpaceReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.residual_cross.is_none_or(|x| x <= tol)
            && self.marginal_cross.is_none_or(|x| x <= tol)
            && self.rank == self.residual_len
    }
}

/// Dense `R_tau` over the full data vector.
pub fn dense_residual_query(domain: &Domain, tau: &Clique) -> Result<DenseMatrix<f64>> {
    KronOperator::new(
        (0..domain.len())
            .map(|k| {
                if tau.contains(k) {
                    FactorKind::Diff(domain.size(k))
                } else {
                    FactorKind::OnesRow(domain.size(k))
                }
            })
            .collect(),
    )?
    .dense_materialize_with_guard(DEFAULT_DENSE_GUARD)
}

/// Dense `M_gamma` over the full data vector.
pub fn dense_marginal_query(domain: &Domain, gamma: &Clique) -> Result<DenseMatrix<f64>> {
    KronOperator::new(
        (0..domain.len())
            .map(|k| {
                if gamma.contains(k) {
                    FactorKind::Identity(domain.size(k))
                } else {
                    FactorKind::OnesRow(domain.size(k))
                }
            })
            .collect(),
    )?
    .dense_materialize_with_guard(DEFAULT_DENSE_GUARD)
}

/// Verifies residual orthogonality and full row rank on a small domain.
pub fn residual_row_space_checks(
    domain: &Domain,
    tau: &Clique,
    other: &Clique,
) -> Result<RowSpaceReport> {
    domain.check_clique(tau)?;
    domain.check_clique(other)?;
    let r = dense_residual_query(domain, tau)?;
    let residual_cross = if tau != other {
        let r2 = dense_residual_query(domain, other)?;
        Some(r.matmul(&r2.transpose())?.max_abs())
    } else {
        None
    };
    let marginal_cross = if !tau.is_subset(other) {
        let m = dense_marginal_query(domain, other)?;
        Some(r.matmul(&m.transpose())?.max_abs())
    } else {
        None
    };
    Ok(RowSpaceReport {
        residual_cross,
        marginal_cross,
        rank: r.rank(1e-9),
        residual_len: domain.residual_len(tau),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[usize]) -> Clique {
        Clique::new(v.to_vec()).unwrap()
    }

    #[test]
    fn orthogonal_residuals() {
        let d = Domain::from_sizes(&[2, 2]).unwrap();
        let rep = residual_row_space_checks(&d, &c(&[0]), &c(&[1])).unwrap();
        assert_eq!(rep.residual_cross, Some(0.0));
        assert!(rep.holds(0.0));
    }

    #[test]
    fn residual_orthogonal_to_non_containing_marginal() {
        let d = Domain::from_sizes(&[2, 3]).unwrap();
        let rep = residual_row_space_checks(&d, &c(&[1]), &c(&[0])).unwrap();
        assert_eq!(rep.marginal_cross, Some(0.0));
        assert!(rep.holds(0.0));
    }

    #[test]
    fn full_row_rank() {
        let d = Domain::from_sizes(&[3]).unwrap();
        let rep = residual_row_space_checks(&d, &c(&[0]), &c(&[0])).unwrap();
        assert_eq!(rep.rank, 2);
        assert_eq!(rep.residual_len, 2);
    }

    #[test]
    fn guard_applies() {
        let d = Domain::from_sizes(&[20, 20, 20, 20]).unwrap();
        assert!(residual_row_space_checks(&d, &c(&[0]), &c(&[1])).is_err());
    }
}
