//! Synthetic problem generators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::CandidatePool;
use crate::error::{OedError, Result};
use crate::gaussian::{GaussianMeasure, SpdMatrix};
use crate::numeric::{sample_rng, symmetrize};

/// Diagonal shift added to generated prior covariances.
pub const PRIOR_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomParams {
    pub n: usize,
    pub q: usize,
    pub noise_variance: f64,
}

impl RandomParams {
    pub fn new(n: usize, q: usize) -> Self {
        RandomParams {
            n,
            q,
            noise_variance: 1.0,
        }
    }
}

/// Unit-normal `F`, prior covariance `AᵀA/n + δI` with unit-normal `A`, and
/// independent noise of the given variance.
pub fn random_pool(params: RandomParams, seed: u64) -> Result<CandidatePool> {
    let RandomParams { n, q, noise_variance } = params;
    if n == 0 || q == 0 {
        return Err(OedError::InvalidArgument("dimensions must be at least 1".into()));
    }
    if !(noise_variance > 0.0 && noise_variance.is_finite()) {
        return Err(OedError::InvalidArgument(format!(
            "noise variance must be positive, got {noise_variance}"
        )));
    }
    let mut rng = sample_rng(seed, 0);
    let f = DMatrix::from_fn(q, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cov = symmetrize(&(a.transpose() * &a / n as f64)) + DMatrix::identity(n, n) * PRIOR_JITTER;
    CandidatePool::new(
        f,
        vec![noise_variance; q],
        GaussianMeasure::centered(SpdMatrix::new(cov)?),
        None,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvolutionParams {
    /// Grid points on `[0, 1]`.
    pub n: usize,
    /// Blur kernel width.
    pub width: f64,
    /// Prior correlation length.
    pub length_scale: f64,
    pub prior_variance: f64,
    pub noise_variance: f64,
    /// Sensor locations in `[0, 1]`.
    pub stations: Vec<f64>,
}

impl DeconvolutionParams {
    /// `q` stations at cell centres `(i + ½)/q`.
    pub fn uniform(n: usize, q: usize) -> Self {
        DeconvolutionParams {
            n,
            width: 0.05,
            length_scale: 0.1,
            prior_variance: 1.0,
            noise_variance: 1e-2,
            stations: (0..q).map(|i| (i as f64 + 0.5) / q as f64).collect(),
        }
    }
}

fn grid(n: usize) -> Vec<f64> {
    if n == 1 {
        vec![0.5]
    } else {
        (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
    }
}

/// One-dimensional deconvolution: row `i` is a Gaussian blur of width `w`
/// centred at station `sᵢ`, integrated against the parameter on a uniform
/// grid over `[0, 1]`. The prior is squared-exponential plus `δI`.
pub fn deconvolution_pool(params: &DeconvolutionParams) -> Result<CandidatePool> {
    let DeconvolutionParams {
        n,
        width,
        length_scale,
        prior_variance,
        noise_variance,
        ref stations,
    } = *params;
    if n == 0 || stations.is_empty() {
        return Err(OedError::InvalidArgument("need at least one grid point and one station".into()));
    }
    for (name, v) in [
        ("kernel width", width),
        ("length scale", length_scale),
        ("prior variance", prior_variance),
        ("noise variance", noise_variance),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(OedError::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if let Some(s) = stations.iter().find(|s| !s.is_finite()) {
        return Err(OedError::InvalidArgument(format!("station {s} is not finite")));
    }
    let x = grid(n);
    let h = 1.0 / n as f64;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * width);
    let rows = DMatrix::from_fn(stations.len(), n, |i, j| {
        let d = x[j] - stations[i];
        h * norm * (-0.5 * d * d / (width * width)).exp()
    });
    let cov = DMatrix::from_fn(n, n, |j, k| {
        let d = x[j] - x[k];
        prior_variance * (-0.5 * d * d / (length_scale * length_scale)).exp()
    }) + DMatrix::identity(n, n) * PRIOR_JITTER;
    let labels = stations.iter().map(|s| format!("x={s}")).collect();
    CandidatePool::new(
        rows,
        vec![noise_variance; stations.len()],
        GaussianMeasure::new(DVector::zeros(n), SpdMatrix::new(cov)?)?,
        Some(labels),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_random_problem() {
        let pool = random_pool(RandomParams::new(1, 1), 0).unwrap();
        assert_eq!((pool.n(), pool.len()), (1, 1));
        assert!(pool.full_problem().is_ok());
    }

    #[test]
    fn random_is_seeded() {
        let a = random_pool(RandomParams::new(4, 6), 9).unwrap();
        let b = random_pool(RandomParams::new(4, 6), 9).unwrap();
        let c = random_pool(RandomParams::new(4, 6), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn duplicate_stations_give_identical_rows() {
        let mut params = DeconvolutionParams::uniform(30, 3);
        params.stations = vec![0.25, 0.25, 0.7];
        let pool = deconvolution_pool(&params).unwrap();
        assert_eq!(pool.rows().row(0), pool.rows().row(1));
        assert_ne!(pool.rows().row(0), pool.rows().row(2));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(random_pool(RandomParams::new(0, 3), 0).is_err());
        let mut p = DeconvolutionParams::uniform(10, 2);
        p.width = 0.0;
        assert!(deconvolution_pool(&p).is_err());
        let mut p = DeconvolutionParams::uniform(10, 2);
        p.stations.clear();
        assert!(deconvolution_pool(&p).is_err());
    }
}
