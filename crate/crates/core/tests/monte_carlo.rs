//! Sampling checks of noise distributions. Seeds are fixed, so these are
//! deterministic; tolerances leave several standard errors of headroom.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rem_core::oracle::difference_matrix;
use rem_core::privacy::{add_residual_noise, exponential_select, stream_rng, PrivacyAccountant};
use rem_core::reconstruct::{decompose_marginal, MarginalMeasurement};
use rem_core::workload::{Clique, Domain, OperatorCache};

const DRAWS: usize = 100_000;

fn c(attrs: &[usize]) -> Clique {
    Clique::new(attrs.to_vec()).unwrap()
}

/// Accumulates the joint sample covariance of a list of zero-mean blocks.
struct Moments {
    sizes: Vec<usize>,
    sum: DMatrix<f64>,
    n: usize,
}

impl Moments {
    fn new(sizes: Vec<usize>) -> Self {
        let m = sizes.iter().sum();
        Self {
            sizes,
            sum: DMatrix::zeros(m, m),
            n: 0,
        }
    }

    fn push(&mut self, blocks: &[Vec<f64>]) {
        let v = DVector::from_iterator(self.sum.nrows(), blocks.iter().flatten().copied());
        self.sum.ger(1.0, &v, &v, 1.0);
        self.n += 1;
    }

    fn cov(&self) -> DMatrix<f64> {
        &self.sum / self.n as f64
    }

    fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let off = |k: usize| self.sizes[..k].iter().sum::<usize>();
        self.cov()
            .view((off(i), off(j)), (self.sizes[i], self.sizes[j]))
            .into_owned()
    }
}

fn rel_frobenius(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (est - truth).norm() / truth.norm()
}

#[test]
fn decomposed_pieces_have_stated_covariance_and_are_independent() {
    let d = Domain::from_sizes(&[2, 3]).unwrap();
    let cache = OperatorCache::<f64>::new(&d);
    let gamma = c(&[0, 1]);
    let sigma2: f64 = 2.5;
    let taus = gamma.subsets();
    let mut rng = stream_rng(11, 0);
    let mut moments = Moments::new(taus.iter().map(|t| d.residual_len(t)).collect());
    let mut scales = Vec::new();
    for _ in 0..DRAWS {
        // Zero signal, so the pieces are pure noise.
        let noise: Vec<f64> = (0..6)
            .map(|_| {
                sigma2.sqrt()
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let y = MarginalMeasurement::new(&d, gamma.clone(), noise, sigma2).unwrap();
        let parts = decompose_marginal(&cache, &y).unwrap();
        assert_eq!(
            parts.iter().map(|z| &z.clique).collect::<Vec<_>>(),
            taus.iter().collect::<Vec<_>>()
        );
        if scales.is_empty() {
            scales = parts.iter().map(|z| z.sigma2).collect();
        }
        moments.push(&parts.into_iter().map(|z| z.values).collect::<Vec<_>>());
    }
    let cov = moments.cov();
    for (i, t) in taus.iter().enumerate() {
        let dm = difference_matrix(&d, t);
        let truth = (&dm * dm.transpose()) * scales[i];
        let est = moments.block(i, i);
        assert!(
            rel_frobenius(&est, &truth) < 0.05,
            "{t:?}: {est} vs {truth}"
        );
        for (j, other) in taus.iter().enumerate() {
            if j == i {
                continue;
            }
            let cross = moments.block(i, j);
            let oi: usize = moments.sizes[..i].iter().sum();
            let oj: usize = moments.sizes[..j].iter().sum();
            for r in 0..cross.nrows() {
                for s in 0..cross.ncols() {
                    let se = (cov[(oi + r, oi + r)] * cov[(oj + s, oj + s)] / DRAWS as f64).sqrt();
                    assert!(cross[(r, s)].abs() <= 5.0 * se, "cross {t:?} {other:?}");
                }
            }
        }
    }
}

#[test]
fn residual_noise_has_difference_covariance() {
    let d = Domain::from_sizes(&[3, 4]).unwrap();
    let tau = c(&[0, 1]);
    let sigma2 = 0.7;
    let m = d.residual_len(&tau);
    let mut rng = stream_rng(12, 0);
    let mut moments = Moments::new(vec![m]);
    let zero = vec![0.0; m];
    for _ in 0..DRAWS {
        moments.push(&[add_residual_noise(&d, &tau, &zero, sigma2, &mut rng).unwrap()]);
    }
    let dm = difference_matrix(&d, &tau);
    let truth = (&dm * dm.transpose()) * sigma2;
    assert!(rel_frobenius(&moments.cov(), &truth) < 0.05);
}

#[test]
fn exponential_mechanism_two_point_ratio() {
    let eps = 2.0;
    let scores = [(0usize, 0.0), (1usize, 1.0)];
    let mut acc = PrivacyAccountant::new(1e9).unwrap();
    let mut rng = stream_rng(13, 0);
    let mut counts = [0usize; 2];
    for _ in 0..DRAWS {
        counts[exponential_select(&scores, eps, 1.0, &mut rng, &mut acc, "pick").unwrap()] += 1;
    }
    let ratio = counts[1] as f64 / counts[0] as f64;
    let expect = (eps / 2.0f64).exp();
    assert!(
        (ratio / expect - 1.0).abs() < 0.05,
        "ratio {ratio}, expected {expect}"
    );
}
