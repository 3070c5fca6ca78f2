//! Dense brute-force reference implementations for small domains.
//!
//! Every matrix here is built cell by cell from its definition over the full
//! data vector, without the Kronecker machinery, so agreement with the
//! structured code is meaningful.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::privacy::stream_rng;
use crate::reconstruct::{
    decompose_marginal, emp_reconstruct, residualplanner_reconstruct, MarginalMeasurement,
    ResidualMeasurement,
};
use crate::workload::{all_k_way, downward_closure, Clique, Domain, OperatorCache};

/// Largest full data vector the oracles will build.
pub const ORACLE_GUARD: usize = 4096;

const PINV_EPS: f64 = 1e-10;

fn check_guard(domain: &Domain) -> Result<usize> {
    let n = domain.data_vector_size();
    if n > ORACLE_GUARD as f64 {
        return Err(Error::DenseGuard {
            entries: n as usize,
            guard: ORACLE_GUARD,
        });
    }
    Ok(n as usize)
}

/// Row-major digits of full-domain cell `cell`.
fn digits(domain: &Domain, mut cell: usize) -> Vec<usize> {
    let mut out = vec![0; domain.len()];
    for k in (0..domain.len()).rev() {
        out[k] = cell % domain.size(k);
        cell /= domain.size(k);
    }
    out
}

fn project(domain: &Domain, clique: &Clique, digits: &[usize]) -> usize {
    clique
        .iter()
        .fold(0, |acc, k| acc * domain.size(k) + digits[k])
}

/// `M_gamma`: one row per gamma cell, ones where a full cell projects there.
pub fn marginal_matrix(domain: &Domain, gamma: &Clique) -> Result<DMatrix<f64>> {
    let n = check_guard(domain)?;
    domain.check_clique(gamma)?;
    let mut m = DMatrix::zeros(domain.marginal_len(gamma), n);
    for cell in 0..n {
        m[(project(domain, gamma, &digits(domain, cell)), cell)] = 1.0;
    }
    Ok(m)
}

/// Successive-difference matrix, `(D v)_i = v_i - v_{i+1}`.
pub fn diff_matrix(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n.saturating_sub(1), n);
    for i in 0..n.saturating_sub(1) {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -1.0;
    }
    d
}

/// `D_tau`: Kronecker product of difference matrices over tau.
pub fn difference_matrix(domain: &Domain, tau: &Clique) -> DMatrix<f64> {
    tau.iter().fold(DMatrix::from_element(1, 1, 1.0), |acc, k| {
        acc.kronecker(&diff_matrix(domain.size(k)))
    })
}

/// `R_tau = D_tau M_tau`.
pub fn residual_matrix(domain: &Domain, tau: &Clique) -> Result<DMatrix<f64>> {
    Ok(difference_matrix(domain, tau) * marginal_matrix(domain, tau)?)
}

/// Moore-Penrose pseudoinverse as `(M^T M)^+ M^T`, with `(M^T M)^+` from a
/// symmetric eigendecomposition. Eigenvalues below `PINV_EPS` times the
/// largest are treated as zero. The result is checked against
/// `M M^+ M = M` before it is returned.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    let cutoff = PINV_EPS * eig.eigenvalues.amax();
    let n = m.ncols();
    let mut gram_pinv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            gram_pinv += v * v.transpose() / lambda;
        }
    }
    let out = gram_pinv * m.transpose();
    let err = (m * &out * m - m).amax();
    if err > 1e-9 * m.amax().max(1.0) {
        return Err(Error::Numeric(format!(
            "dense pseudoinverse check failed by {err:e}"
        )));
    }
    Ok(out)
}

fn stack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// `M_gamma V^+ v` with `V`, `v` the marginal queries and answers scaled
/// by `1 / sigma`; with equal scales this is `M_gamma M_Q^+ y`.
pub fn dense_marginal_pinv(
    domain: &Domain,
    workload: &[Clique],
    measurements: &[MarginalMeasurement<f64>],
) -> Result<BTreeMap<Clique, Vec<f64>>> {
    let n = check_guard(domain)?;
    let mut blocks = Vec::new();
    let mut rhs = Vec::new();
    for m in measurements {
        let s = m.sigma2.sqrt();
        blocks.push(marginal_matrix(domain, &m.clique)? / s);
        rhs.extend(m.values.iter().map(|v| v / s));
    }
    let p_hat = if blocks.is_empty() {
        DVector::zeros(n)
    } else {
        pinv(&stack(&blocks))? * DVector::from_vec(rhs)
    };
    workload
        .iter()
        .map(|g| {
            Ok((
                g.clone(),
                (marginal_matrix(domain, g)? * &p_hat).as_slice().to_vec(),
            ))
        })
        .collect()
}

/// `M_gamma R_S^+ z` with `R_S` stacking the residual queries in `residuals`.
pub fn dense_residual_pinv(
    domain: &Domain,
    workload: &[Clique],
    residuals: &[ResidualMeasurement<f64>],
) -> Result<BTreeMap<Clique, Vec<f64>>> {
    let n = check_guard(domain)?;
    let mut blocks = Vec::new();
    let mut rhs = Vec::new();
    for z in residuals {
        blocks.push(residual_matrix(domain, &z.clique)?);
        rhs.extend_from_slice(&z.values);
    }
    let p_hat = if blocks.is_empty() {
        DVector::zeros(n)
    } else {
        pinv(&stack(&blocks))? * DVector::from_vec(rhs)
    };
    workload
        .iter()
        .map(|g| {
            Ok((
                g.clone(),
                (marginal_matrix(domain, g)? * &p_hat).as_slice().to_vec(),
            ))
        })
        .collect()
}

/// Dense form of the non-negative reconstruction problem over the stacked
/// residual vector `x`: minimize `1/2 x^T h x - b^T x + c` subject to
/// `g x >= 0`, with `A_{gamma,tau} = M_gamma R_tau^+`.
#[derive(Debug, Clone)]
pub struct LnnQp {
    pub taus: Vec<Clique>,
    /// Start of each residual's block in `x`, plus the total length.
    pub offsets: Vec<usize>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub g: DMatrix<f64>,
}

impl LnnQp {
    /// Measured residuals carry weight `weight_base^{|tau|}`; unmeasured
    /// ones are penalized by `eta ||A_{tau,tau} x_tau||^2`.
    pub fn build(
        domain: &Domain,
        workload: &[Clique],
        estimates: &BTreeMap<Clique, Vec<f64>>,
        weight_base: f64,
        eta: f64,
    ) -> Result<Self> {
        check_guard(domain)?;
        let taus: Vec<Clique> = downward_closure(workload).into_iter().collect();
        let mut offsets = vec![0];
        for t in &taus {
            offsets.push(offsets[offsets.len() - 1] + domain.residual_len(t));
        }
        let n = offsets[taus.len()];
        let recon = |g: &Clique, t: &Clique| -> Result<DMatrix<f64>> {
            Ok(marginal_matrix(domain, g)? * pinv(&residual_matrix(domain, t)?)?)
        };
        let mut h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut c = 0.0;
        for (i, t) in taus.iter().enumerate() {
            let a = recon(t, t)?;
            let ata = a.transpose() * &a;
            let (o, m) = (offsets[i], offsets[i + 1] - offsets[i]);
            match estimates.get(t) {
                Some(z) => {
                    if z.len() != m {
                        return Err(Error::Shape {
                            expected: m,
                            got: z.len(),
                        });
                    }
                    let hw = ata / weight_base.powi(t.len() as i32);
                    let z = DVector::from_column_slice(z);
                    let hz = &hw * &z;
                    c += 0.5 * z.dot(&hz);
                    b.rows_mut(o, m).copy_from(&hz);
                    h.view_mut((o, o), (m, m)).copy_from(&hw);
                }
                None => h.view_mut((o, o), (m, m)).copy_from(&(ata * (2.0 * eta))),
            }
        }
        let rows: usize = workload.iter().map(|g| domain.marginal_len(g)).sum();
        let mut g = DMatrix::zeros(rows, n);
        let mut r = 0;
        for gamma in workload {
            let len = domain.marginal_len(gamma);
            for (i, t) in taus.iter().enumerate() {
                if t.iter().all(|k| gamma.contains(k)) {
                    g.view_mut((r, offsets[i]), (len, offsets[i + 1] - offsets[i]))
                        .copy_from(&recon(gamma, t)?);
                }
            }
            r += len;
        }
        Ok(Self {
            taus,
            offsets,
            h,
            b,
            c,
            g,
        })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) - self.b.dot(x) + self.c
    }

    /// Stacks per-clique residuals in `taus` order; missing ones are zero.
    pub fn stack(&self, alpha: &BTreeMap<Clique, Vec<f64>>) -> DVector<f64> {
        let mut x = DVector::zeros(self.offsets[self.taus.len()]);
        for (i, t) in self.taus.iter().enumerate() {
            if let Some(a) = alpha.get(t) {
                x.rows_mut(self.offsets[i], a.len()).copy_from_slice(a);
            }
        }
        x
    }

    /// Minimizer of the unconstrained objective.
    pub fn unconstrained(&self) -> Result<DVector<f64>> {
        let hinv = self
            .h
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular objective".into()))?;
        Ok(hinv * &self.b)
    }

    /// Exact coordinate descent on the dual `min_{v >= 0} 1/2 v^T Q v + v^T q`
    /// with `Q = g h^{-1} g^T`, `q = g h^{-1} b`; returns `h^{-1}(b + g^T v)`.
    pub fn solve(&self, max_sweeps: usize) -> Result<DVector<f64>> {
        let hinv = self
            .h
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular objective".into()))?;
        let q = &self.g * &hinv * self.g.transpose();
        let lin = &self.g * &hinv * &self.b;
        let mut v = DVector::<f64>::zeros(self.g.nrows());
        let mut qv = DVector::<f64>::zeros(self.g.nrows());
        for _ in 0..max_sweeps {
            let mut moved = 0.0f64;
            for i in 0..v.len() {
                let next = (v[i] - (qv[i] + lin[i]) / q[(i, i)]).max(0.0);
                let d = next - v[i];
                if d != 0.0 {
                    qv.axpy(d, &q.column(i), 1.0);
                    v[i] = next;
                    moved = moved.max(d.abs());
                }
            }
            if moved < 1e-13 {
                break;
            }
        }
        Ok(hinv * (&self.b + self.g.transpose() * v))
    }
}

/// Faults that the oracle suite must detect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the structured reconstruction before comparison.
    SignFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub instances: usize,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub domain: Vec<usize>,
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn max_deviation(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_deviation)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_deviation() <= tol
    }
}

/// Largest entrywise deviation relative to `max(1, max |b|)`.
pub fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Random data vector with small non-negative integer counts.
pub fn random_counts<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(0..6) as f64)
}

fn noise<R: Rng + ?Sized>(len: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Noisy marginal measurements of `p` on a random multiset of cliques.
pub fn random_marginal_measurements<R: Rng + ?Sized>(
    domain: &Domain,
    p: &DVector<f64>,
    count: usize,
    sigmas: &[f64],
    rng: &mut R,
) -> Result<Vec<MarginalMeasurement<f64>>> {
    let all = Clique::new((0..domain.len()).collect())?.subsets();
    (0..count)
        .map(|_| {
            let gamma = all.choose(rng).expect("domain has subsets").clone();
            let sigma2: f64 = *sigmas.choose(rng).expect("at least one scale");
            let exact = marginal_matrix(domain, &gamma)? * p;
            let y: Vec<f64> = exact
                .iter()
                .zip(noise(exact.len(), sigma2.sqrt(), rng))
                .map(|(a, e)| a + e)
                .collect();
            MarginalMeasurement::new(domain, gamma, y, sigma2)
        })
        .collect()
}

/// Compares the structured reconstruction against the dense oracles on
/// `instances` random problems over `domain`.
pub fn run_suite(
    domain: &Domain,
    instances: usize,
    seed: u64,
    fault: Option<Fault>,
) -> Result<OracleReport> {
    let n = check_guard(domain)?;
    let cache = OperatorCache::<f64>::new(domain);
    let d = domain.len();
    let workload: Vec<Clique> = if d >= 2 {
        all_k_way(d, 2)
    } else {
        all_k_way(d, d)
    };
    let flip = |v: Vec<f64>| match fault {
        Some(Fault::SignFlip) => v.into_iter().map(|x| -x).collect(),
        None => v,
    };
    let mut emp_equal = 0.0f64;
    let mut emp_scaled = 0.0f64;
    let mut planner = 0.0f64;
    let mut decomposition = 0.0f64;
    for i in 0..instances {
        let mut rng = stream_rng(seed, i as u64);
        let p = random_counts(n, &mut rng);
        let q = rng.random_range(1..=2 * d + 1);
        for (sigmas, worst) in [
            (&[1.0][..], &mut emp_equal),
            (&[0.5, 1.0, 2.0][..], &mut emp_scaled),
        ] {
            let ys = random_marginal_measurements(domain, &p, q, sigmas, &mut rng)?;
            let fast = emp_reconstruct(&cache, &workload, &ys)?;
            let slow = dense_marginal_pinv(domain, &workload, &ys)?;
            for g in &workload {
                let got = flip(fast.marginals[g].values.clone());
                *worst = worst.max(relative_deviation(&got, &slow[g]));
            }
        }
        let taus: Vec<Clique> = downward_closure(&workload).into_iter().collect();
        let zs = taus
            .iter()
            .map(|t| {
                let exact = residual_matrix(domain, t)? * &p;
                let z: Vec<f64> = exact
                    .iter()
                    .zip(noise(exact.len(), 1.0, &mut rng))
                    .map(|(a, e)| a + e)
                    .collect();
                ResidualMeasurement::new(domain, t.clone(), z, 1.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let fast = residualplanner_reconstruct(&cache, &workload, &zs)?;
        let slow = dense_residual_pinv(domain, &workload, &zs)?;
        for g in &workload {
            let got = flip(fast.marginals[g].values.clone());
            planner = planner.max(relative_deviation(&got, &slow[g]));
        }
        let full = Clique::new((0..d).collect())?;
        let m = marginal_matrix(domain, &full)?;
        let y: Vec<f64> = (&m * &p)
            .iter()
            .zip(noise(m.nrows(), 1.0, &mut rng))
            .map(|(a, e)| a + e)
            .collect();
        let ym = MarginalMeasurement::new(domain, full.clone(), y.clone(), 1.0)?;
        let m_pinv = pinv(&m)?;
        for z in decompose_marginal(&cache, &ym)? {
            let r = residual_matrix(domain, &z.clique)?;
            let expect = &r * &m_pinv * DVector::from_vec(y.clone());
            decomposition =
                decomposition.max(relative_deviation(&flip(z.values), expect.as_slice()));
        }
    }
    Ok(OracleReport {
        domain: domain.sizes(),
        checks: vec![
            OracleCheck {
                name: "emp equals marginal pseudoinverse (equal noise)".into(),
                instances,
                max_deviation: emp_equal,
            },
            OracleCheck {
                name: "emp equals scaled marginal pseudoinverse (unequal noise)".into(),
                instances,
                max_deviation: emp_scaled,
            },
            OracleCheck {
                name: "residual reconstruction equals residual pseudoinverse".into(),
                instances,
                max_deviation: planner,
            },
            OracleCheck {
                name: "decomposed residuals equal R_tau M_gamma^+ y".into(),
                instances,
                max_deviation: decomposition,
            },
        ],
    })
}
