//! Structured maps between residual space and marginal space.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use super::{Clique, Domain, MarginalTable, ResidualVector};
use crate::error::{Error, Result};
use crate::kron::{apply_on_axis, FactorKind, KronOperator};
use crate::scalar::Scalar;

fn require_subset(tau: &Clique, gamma: &Clique) -> Result<()> {
    if tau.is_subset(gamma) {
        Ok(())
    } else {
        Err(Error::CliqueContainment {
            sub: tau.to_vec(),
            sup: gamma.to_vec(),
        })
    }
}

/// `A_{gamma,tau}`: maps a tau-residual to its contribution to the
/// gamma-marginal (`DiffPinv` on tau, `1/n_k` columns on gamma \ tau).
pub fn residual_to_marginal_op<T: Scalar>(
    domain: &Domain,
    gamma: &Clique,
    tau: &Clique,
) -> Result<KronOperator<T>> {
    domain.check_clique(gamma)?;
    require_subset(tau, gamma)?;
    KronOperator::new(
        (0..domain.len())
            .map(|k| {
                let n = domain.size(k);
                if tau.contains(k) {
                    FactorKind::DiffPinv(n)
                } else if gamma.contains(k) {
                    FactorKind::ScaledOnesCol(n, T::one() / T::of_usize(n))
                } else {
                    FactorKind::ScalarOne
                }
            })
            .collect(),
    )
}

/// `A^+_{gamma,tau}`: extracts the tau-residual from a gamma-marginal
/// (`Diff` on tau, ones rows on gamma \ tau).
pub fn marginal_to_residual_op<T: Scalar>(
    domain: &Domain,
    gamma: &Clique,
    tau: &Clique,
) -> Result<KronOperator<T>> {
    domain.check_clique(gamma)?;
    require_subset(tau, gamma)?;
    KronOperator::new(
        (0..domain.len())
            .map(|k| {
                let n = domain.size(k);
                if tau.contains(k) {
                    FactorKind::Diff(n)
                } else if gamma.contains(k) {
                    FactorKind::OnesRow(n)
                } else {
                    FactorKind::ScalarOne
                }
            })
            .collect(),
    )
}

/// `D_tau`: differencing on every axis of the tau-marginal.
pub fn difference_op<T: Scalar>(domain: &Domain, tau: &Clique) -> Result<KronOperator<T>> {
    domain.check_clique(tau)?;
    KronOperator::new(
        (0..domain.len())
            .map(|k| {
                if tau.contains(k) {
                    FactorKind::Diff(domain.size(k))
                } else {
                    FactorKind::ScalarOne
                }
            })
            .collect(),
    )
}

/// `D_tau D_tau^T` applied to a residual-space vector.
pub fn apply_difference_gram<T: Scalar>(op: &KronOperator<T>, x: &[T]) -> Result<Vec<T>> {
    op.apply(&op.apply_transpose(x)?)
}

pub fn residual_from_marginal<T: Scalar>(
    domain: &Domain,
    mu: &MarginalTable<T>,
    tau: &Clique,
) -> Result<ResidualVector<T>> {
    let op = marginal_to_residual_op(domain, &mu.clique, tau)?;
    Ok(ResidualVector {
        clique: tau.clone(),
        values: op.apply(&mu.values)?,
    })
}

/// Sums `A_{gamma,tau} z_tau` over the supplied residuals; absent subsets
/// contribute nothing.
pub fn marginal_from_residuals<'a, T: Scalar>(
    domain: &Domain,
    gamma: &Clique,
    residuals: impl IntoIterator<Item = &'a ResidualVector<T>>,
) -> Result<MarginalTable<T>> {
    let mut out = MarginalTable::zeros(domain, gamma.clone());
    for z in residuals {
        let op = residual_to_marginal_op(domain, gamma, &z.clique)?;
        let part = op.apply(&z.values)?;
        for (o, p) in out.values.iter_mut().zip(part) {
            *o = *o + p;
        }
    }
    Ok(out)
}

fn axis_factor<T: Scalar>(n: usize, in_tau: bool) -> FactorKind<T> {
    if in_tau {
        FactorKind::DiffPinv(n)
    } else {
        FactorKind::ScaledOnesCol(n, T::one() / T::of_usize(n))
    }
}

fn axis_len(n: usize, in_tau: bool) -> usize {
    if in_tau {
        n - 1
    } else {
        1
    }
}

/// `A_{gamma,tau}^T y` for every `tau` subset of `gamma`, sorted by clique.
/// Partial products are shared between subsets, so the cost is about
/// `2 |gamma| n_gamma` instead of `|gamma| n_gamma 2^|gamma|`.
pub fn residual_adjoints<T: Scalar>(
    domain: &Domain,
    gamma: &Clique,
    y: &[T],
) -> Result<Vec<(Clique, Vec<T>)>> {
    domain.check_clique(gamma)?;
    let sizes: Vec<usize> = gamma.iter().map(|k| domain.size(k)).collect();
    let n_gamma: usize = sizes.iter().product();
    if y.len() != n_gamma {
        return Err(Error::Shape {
            expected: n_gamma,
            got: y.len(),
        });
    }
    let mut frontier: Vec<(Vec<usize>, Vec<usize>, Vec<T>)> =
        vec![(Vec::new(), sizes.clone(), y.to_vec())];
    for (axis, (&k, &n)) in gamma.attrs().iter().zip(&sizes).enumerate() {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for (tau, dims, v) in frontier {
            for in_tau in [false, true] {
                let out = apply_on_axis(&axis_factor::<T>(n, in_tau), true, &v, &dims, axis)?;
                let mut d = dims.clone();
                d[axis] = axis_len(n, in_tau);
                let mut t = tau.clone();
                if in_tau {
                    t.push(k);
                }
                next.push((t, d, out));
            }
        }
        frontier = next;
    }
    let mut out = frontier
        .into_iter()
        .map(|(tau, _, v)| Ok((Clique::new(tau)?, v)))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// `sum_tau A_{gamma,tau} alpha_tau` over the subsets `tau` of `gamma` for
/// which `alpha` returns a vector, sharing partial sums across subsets.
pub fn residual_sum<'a, T: Scalar>(
    domain: &Domain,
    gamma: &Clique,
    alpha: impl Fn(&Clique) -> Option<&'a [T]>,
) -> Result<Vec<T>> {
    domain.check_clique(gamma)?;
    let sizes: Vec<usize> = gamma.iter().map(|k| domain.size(k)).collect();
    let attrs = gamma.attrs();
    // Each entry: membership of the not-yet-expanded axes, and the tensor.
    let mut entries: Vec<(Vec<bool>, Vec<T>)> = Vec::new();
    for tau in gamma.subsets() {
        if let Some(a) = alpha(&tau) {
            let expected = domain.residual_len(&tau);
            if a.len() != expected {
                return Err(Error::Shape {
                    expected,
                    got: a.len(),
                });
            }
            entries.push((attrs.iter().map(|&k| tau.contains(k)).collect(), a.to_vec()));
        }
    }
    for (axis, &n) in sizes.iter().enumerate() {
        let mut merged: BTreeMap<Vec<bool>, Vec<T>> = BTreeMap::new();
        for (pattern, v) in entries {
            let dims: Vec<usize> = sizes[..axis]
                .iter()
                .copied()
                .chain(
                    pattern
                        .iter()
                        .zip(&sizes[axis..])
                        .map(|(&t, &n)| axis_len(n, t)),
                )
                .collect();
            let out = apply_on_axis(&axis_factor::<T>(n, pattern[0]), false, &v, &dims, axis)?;
            match merged.entry(pattern[1..].to_vec()) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(out);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    e.get_mut()
                        .iter_mut()
                        .zip(out)
                        .for_each(|(a, b)| *a = *a + b);
                }
            }
        }
        entries = merged.into_iter().collect();
    }
    Ok(entries
        .pop()
        .map(|(_, v)| v)
        .unwrap_or_else(|| vec![T::zero(); sizes.iter().product()]))
}

type OpPair<T> = (Arc<KronOperator<T>>, Arc<KronOperator<T>>);

/// Lazily built `(A_{gamma,tau}, A^+_{gamma,tau})` operators, shared across
/// threads. The empty clique as `gamma` keys the per-tau difference
/// operators.
#[derive(Debug)]
pub struct OperatorCache<T> {
    domain: Domain,
    pairs: RwLock<HashMap<(Clique, Clique), OpPair<T>>>,
    diffs: RwLock<HashMap<Clique, Arc<KronOperator<T>>>>,
}

impl<T: Scalar> OperatorCache<T> {
    pub fn new(domain: &Domain) -> Self {
        Self {
            domain: domain.clone(),
            pairs: RwLock::new(HashMap::new()),
            diffs: RwLock::new(HashMap::new()),
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    fn pair(&self, gamma: &Clique, tau: &Clique) -> Result<OpPair<T>> {
        let key = (gamma.clone(), tau.clone());
        if let Some(p) = self.pairs.read().unwrap().get(&key) {
            return Ok(p.clone());
        }
        let a = Arc::new(residual_to_marginal_op(&self.domain, gamma, tau)?);
        let a_pinv = Arc::new(marginal_to_residual_op(&self.domain, gamma, tau)?);
        let mut w = self.pairs.write().unwrap();
        Ok(w.entry(key).or_insert((a, a_pinv)).clone())
    }

    /// `A_{gamma,tau}`.
    pub fn reconstruct_op(&self, gamma: &Clique, tau: &Clique) -> Result<Arc<KronOperator<T>>> {
        Ok(self.pair(gamma, tau)?.0)
    }

    /// `A^+_{gamma,tau}`.
    pub fn decompose_op(&self, gamma: &Clique, tau: &Clique) -> Result<Arc<KronOperator<T>>> {
        Ok(self.pair(gamma, tau)?.1)
    }

    /// `D_tau`.
    pub fn difference_op(&self, tau: &Clique) -> Result<Arc<KronOperator<T>>> {
        if let Some(d) = self.diffs.read().unwrap().get(tau) {
            return Ok(d.clone());
        }
        let d = Arc::new(difference_op(&self.domain, tau)?);
        Ok(self
            .diffs
            .write()
            .unwrap()
            .entry(tau.clone())
            .or_insert(d)
            .clone())
    }

    pub fn residual_from_marginal(
        &self,
        mu: &MarginalTable<T>,
        tau: &Clique,
    ) -> Result<ResidualVector<T>> {
        Ok(ResidualVector {
            clique: tau.clone(),
            values: self.decompose_op(&mu.clique, tau)?.apply(&mu.values)?,
        })
    }

    /// Same contract as [`marginal_from_residuals`], reusing cached operators.
    pub fn marginal_from_residuals<'a>(
        &self,
        gamma: &Clique,
        residuals: impl IntoIterator<Item = (&'a Clique, &'a [T])>,
    ) -> Result<MarginalTable<T>> {
        let mut out = MarginalTable::zeros(&self.domain, gamma.clone());
        for (tau, z) in residuals {
            let part = self.reconstruct_op(gamma, tau)?.apply(z)?;
            for (o, p) in out.values.iter_mut().zip(part) {
                *o = *o + p;
            }
        }
        Ok(out)
    }

    /// Reconstructs `gamma` from the residuals in `alpha` whose clique is a
    /// subset of `gamma`.
    pub fn reconstruct_from_map(
        &self,
        gamma: &Clique,
        alpha: &BTreeMap<Clique, Vec<T>>,
    ) -> Result<MarginalTable<T>> {
        self.marginal_from_residuals(
            gamma,
            gamma
                .subsets()
                .into_iter()
                .filter_map(|tau| alpha.get_key_value(&tau))
                .map(|(k, v)| (k, v.as_slice())),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[usize]) -> Clique {
        Clique::new(v.to_vec()).unwrap()
    }

    #[test]
    fn residual_from_marginal_examples() {
        let d = Domain::from_sizes(&[2]).unwrap();
        let mu = MarginalTable::new(&d, c(&[0]), vec![3.0, 5.0]).unwrap();
        assert_eq!(
            residual_from_marginal(&d, &mu, &c(&[])).unwrap().values,
            vec![8.0]
        );
        assert_eq!(
            residual_from_marginal(&d, &mu, &c(&[0])).unwrap().values,
            vec![-2.0]
        );
    }

    #[test]
    fn containment_is_checked() {
        let d = Domain::from_sizes(&[2, 2]).unwrap();
        let mu = MarginalTable::new(&d, c(&[0]), vec![3.0, 5.0]).unwrap();
        assert!(matches!(
            residual_from_marginal(&d, &mu, &c(&[1])),
            Err(Error::CliqueContainment { .. })
        ));
        let z = ResidualVector::new(&d, c(&[1]), vec![1.0]).unwrap();
        assert!(marginal_from_residuals(&d, &c(&[0]), [&z]).is_err());
    }

    #[test]
    fn marginal_from_residual_examples() {
        let d = Domain::from_sizes(&[3]).unwrap();
        let total = ResidualVector::<f64>::new(&d, c(&[]), vec![6.0]).unwrap();
        let m: MarginalTable<f64> = marginal_from_residuals(&d, &c(&[0]), [&total]).unwrap();
        for v in m.values {
            assert!((v - 2.0).abs() < 1e-12);
        }

        let d = Domain::from_sizes(&[2]).unwrap();
        let total = ResidualVector::new(&d, c(&[]), vec![8.0]).unwrap();
        let r = ResidualVector::new(&d, c(&[0]), vec![-2.0]).unwrap();
        let m: MarginalTable<f64> = marginal_from_residuals(&d, &c(&[0]), [&total, &r]).unwrap();
        assert!((m.values[0] - 3.0).abs() < 1e-12);
        assert!((m.values[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn cache_matches_free_functions() {
        let d = Domain::from_sizes(&[3, 2, 4]).unwrap();
        let cache = OperatorCache::<f64>::new(&d);
        let g = c(&[0, 2]);
        let mu = MarginalTable::new(&d, g.clone(), (0..12).map(f64::from).collect()).unwrap();
        let mut alpha = BTreeMap::new();
        for tau in g.subsets() {
            let a = residual_from_marginal(&d, &mu, &tau).unwrap();
            assert_eq!(cache.residual_from_marginal(&mu, &tau).unwrap(), a);
            alpha.insert(tau, a.values);
        }
        let back = cache.reconstruct_from_map(&g, &alpha).unwrap();
        for (x, y) in back.values.iter().zip(&mu.values) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn shared_transforms_match_per_subset_operators() {
        let d = Domain::from_sizes(&[3, 2, 4, 5]).unwrap();
        let gamma = c(&[0, 2, 3]);
        let n = d.marginal_len(&gamma);
        let y: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 4.5).collect();
        let adj = residual_adjoints(&d, &gamma, &y).unwrap();
        assert_eq!(adj.len(), 8);
        for (tau, v) in &adj {
            let op = residual_to_marginal_op::<f64>(&d, &gamma, tau).unwrap();
            let expect = op.apply_transpose(&y).unwrap();
            assert_eq!(v.len(), expect.len());
            for (a, b) in v.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let alphas: BTreeMap<Clique, Vec<f64>> = gamma
            .subsets()
            .into_iter()
            .filter(|t| t.len() != 1)
            .map(|t| {
                let m = d.residual_len(&t);
                let v = (0..m).map(|i| (i as f64 * 0.7).sin()).collect();
                (t, v)
            })
            .collect();
        let fast = residual_sum(&d, &gamma, |t| alphas.get(t).map(Vec::as_slice)).unwrap();
        let slow = marginal_from_residuals(
            &d,
            &gamma,
            alphas
                .iter()
                .map(|(t, v)| ResidualVector {
                    clique: t.clone(),
                    values: v.clone(),
                })
                .collect::<Vec<_>>()
                .iter(),
        )
        .unwrap();
        for (a, b) in fast.iter().zip(&slow.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let none = residual_sum::<f64>(&d, &gamma, |_| None).unwrap();
        assert_eq!(none, vec![0.0; n]);
    }
}
