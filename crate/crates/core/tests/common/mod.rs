#![allow(dead_code)]

use bayes_oed::design::CandidatePool;
use bayes_oed::gaussian::{GaussianMeasure, SpdMatrix};
use bayes_oed::inverse::{BayesLinearProblem, ForwardModel};
use bayes_oed::numeric::sample_rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Instances with a covariance condition number above this are rejected.
pub const CONDITION_GUARD: f64 = 1e10;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> SpdMatrix {
    let a = gaussian_matrix(rng, n, n);
    let m = a.transpose() * &a / n as f64;
    SpdMatrix::new((&m + m.transpose()) * 0.5 + DMatrix::identity(n, n) * shift).unwrap()
}

pub fn condition(m: &SpdMatrix) -> f64 {
    let eig = m.matrix().clone().symmetric_eigenvalues();
    eig.max() / eig.min()
}

fn build(seed: u64, max_n: usize, max_q: usize, centered: bool) -> BayesLinearProblem {
    let mut rng = sample_rng(seed, 0);
    let n = rng.gen_range(1..=max_n);
    let q = rng.gen_range(1..=max_q);
    let f = gaussian_matrix(&mut rng, q, n);
    let prior_cov = random_spd(&mut rng, n, 1e-2);
    let noise_cov = if rng.gen_bool(0.5) {
        let v: Vec<f64> = (0..q).map(|_| rng.gen_range(0.05..2.0)).collect();
        SpdMatrix::from_diagonal(&v).unwrap()
    } else {
        random_spd(&mut rng, q, 0.1)
    };
    let mean = if centered {
        DVector::zeros(n)
    } else {
        gaussian_matrix(&mut rng, n, 1).column(0).into_owned()
    };
    BayesLinearProblem::new(
        ForwardModel::new(f).unwrap(),
        noise_cov,
        GaussianMeasure::new(mean, prior_cov).unwrap(),
    )
    .unwrap()
}

/// Seeded random problem with `n ≤ max_n`, `q ≤ max_q`, passing the
/// condition guard. Rejected draws move on to a derived seed.
pub fn random_problem(seed: u64, max_n: usize, max_q: usize, centered: bool) -> BayesLinearProblem {
    for attempt in 0u64.. {
        let p = build(seed.wrapping_add(attempt << 32), max_n, max_q, centered);
        if condition(p.prior().cov()) <= CONDITION_GUARD && condition(p.noise_cov()) <= CONDITION_GUARD {
            return p;
        }
    }
    unreachable!()
}

/// Random candidate pool: unit-normal rows, random prior, independent noise.
pub fn random_pool(seed: u64, q: usize, n: usize) -> CandidatePool {
    let mut rng = sample_rng(seed, 7);
    let rows = gaussian_matrix(&mut rng, q, n);
    let prior = random_spd(&mut rng, n, 0.1);
    let variances = (0..q).map(|_| rng.gen_range(0.2..1.5)).collect();
    CandidatePool::new(rows, variances, GaussianMeasure::centered(prior), None).unwrap()
}

/// Pool whose rows are mutually orthogonal under an identity prior, so each
/// candidate's gain `‖fᵢ‖²/σᵢ²` is independent of the others.
pub fn orthogonal_pool(seed: u64, q: usize) -> (CandidatePool, Vec<f64>) {
    let mut rng = sample_rng(seed, 9);
    let basis = gaussian_matrix(&mut rng, q, q).qr().q();
    let scales: Vec<f64> = (0..q).map(|_| rng.gen_range(0.3..3.0)).collect();
    let variances: Vec<f64> = (0..q).map(|_| rng.gen_range(0.5..2.0)).collect();
    let rows = DMatrix::from_fn(q, q, |i, j| scales[i] * basis[(j, i)]);
    let gains = (0..q).map(|i| scales[i] * scales[i] / variances[i]).collect();
    let pool = CandidatePool::new(rows, variances, GaussianMeasure::standard(q), None).unwrap();
    (pool, gains)
}
