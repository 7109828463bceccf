//! Low-rank spectral approximation of the prior-preconditioned Hessian `H̃`
//! and EIG evaluation as `½ Σ log(1 + λᵢ)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::numeric::{sample_rng, symmetrize};

/// Eigenvalues below this fraction of the largest one are clamped to zero.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;
const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TruncationPolicy {
    /// Keep the top `r` eigenpairs.
    Rank(usize),
    /// Keep the fewest eigenpairs whose discarded tail satisfies
    /// `Σ_{i>r} log(1 + λᵢ) ≤ τ`.
    TailTolerance(f64),
}

/// Top eigenpairs `(λᵢ, vᵢ)` of `H̃`, eigenvalues nonincreasing and nonnegative,
/// eigenvectors orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankHessian {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl LowRankHessian {
    pub fn new(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>) -> Result<Self> {
        if eigenvectors.ncols() != eigenvalues.len() {
            return Err(OedError::DimensionMismatch {
                context: "low-rank eigenvectors",
                expected: eigenvalues.len(),
                found: eigenvectors.ncols(),
            });
        }
        if eigenvalues.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(OedError::InvalidArgument(
                "eigenvalues must be finite and nonnegative".into(),
            ));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(OedError::InvalidArgument(
                "eigenvalues must be nonincreasing".into(),
            ));
        }
        let r = eigenvalues.len();
        let gram = eigenvectors.transpose() * &eigenvectors;
        if (gram - DMatrix::identity(r, r)).norm() > ORTHONORMAL_TOL {
            return Err(OedError::InvalidArgument(
                "eigenvectors are not orthonormal".into(),
            ));
        }
        Ok(LowRankHessian {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn empty(n: usize) -> Self {
        LowRankHessian {
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(n, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        &self.eigenvectors * lambda * self.eigenvectors.transpose()
    }
}

fn floor_eigenvalues(values: &mut [f64]) {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v < EIGENVALUE_FLOOR * top || top == 0.0 {
            *v = 0.0;
        }
    }
}

/// Eigen-decomposition sorted nonincreasing with the eigenvalue floor applied.
fn sorted_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(OedError::NonFinite);
    }
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    floor_eigenvalues(&mut values);
    let vectors = eig.eigenvectors.select_columns(&order);
    Ok((values, vectors))
}

fn check_symmetric(h: &DMatrix<f64>) -> Result<()> {
    if !h.is_square() {
        return Err(OedError::NotSquare {
            rows: h.nrows(),
            cols: h.ncols(),
        });
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(OedError::NonFinite);
    }
    let norm = h.norm();
    let asym = (h - h.transpose()).norm();
    let asymmetry = if norm > 0.0 { asym / norm } else { asym };
    if asymmetry > SYMMETRY_TOL {
        return Err(OedError::NotSymmetric {
            asymmetry,
            tolerance: SYMMETRY_TOL,
        });
    }
    Ok(())
}

/// Full spectrum of `H̃`, nonincreasing, floored.
pub fn full_spectrum(h_tilde: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(h_tilde)?;
    Ok(sorted_eigen(symmetrize(h_tilde))?.0)
}

/// Truncated eigendecomposition of `H̃` from a dense symmetric eigensolve.
pub fn truncated_spectrum(h_tilde: &DMatrix<f64>, policy: TruncationPolicy) -> Result<LowRankHessian> {
    check_symmetric(h_tilde)?;
    let n = h_tilde.nrows();
    let (values, vectors) = sorted_eigen(symmetrize(h_tilde))?;
    let r = match policy {
        TruncationPolicy::Rank(r) => {
            if r > n {
                return Err(OedError::InvalidArgument(format!(
                    "rank {r} exceeds dimension {n}"
                )));
            }
            r
        }
        TruncationPolicy::TailTolerance(tau) => {
            if !(tau >= 0.0) {
                return Err(OedError::InvalidArgument(format!(
                    "tail tolerance must be nonnegative, got {tau}"
                )));
            }
            rank_for_tolerance(&values, tau)
        }
    };
    LowRankHessian::new(values[..r].to_vec(), vectors.columns(0, r).into_owned())
}

/// Smallest `r` with `Σ_{i>r} log(1 + λᵢ) ≤ τ`.
fn rank_for_tolerance(values: &[f64], tau: f64) -> usize {
    let mut tail = 0.0;
    for r in (0..values.len()).rev() {
        tail += values[r].ln_1p();
        if tail > tau {
            return r + 1;
        }
    }
    0
}

/// `½ Σ log(1 + λᵢ)` over the retained spectrum.
pub fn eig_from_lowrank(lr: &LowRankHessian) -> f64 {
    0.5 * lr.eigenvalues.iter().map(|l| l.ln_1p()).sum::<f64>()
}

/// `½ Σ_{i>r} log(1 + λᵢ)`: the EIG lost by keeping only the top `r` values.
pub fn truncation_error(full_spectrum: &[f64], r: usize) -> Result<f64> {
    if r > full_spectrum.len() {
        return Err(OedError::InvalidArgument(format!(
            "rank {r} exceeds spectrum length {}",
            full_spectrum.len()
        )));
    }
    if full_spectrum.iter().any(|&l| !(l >= 0.0)) || full_spectrum.windows(2).any(|w| w[0] < w[1]) {
        return Err(OedError::InvalidArgument(
            "spectrum must be nonnegative and nonincreasing".into(),
        ));
    }
    Ok(0.5 * full_spectrum[r..].iter().map(|l| l.ln_1p()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizedConfig {
    pub oversampling: usize,
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for RandomizedConfig {
    fn default() -> Self {
        RandomizedConfig {
            oversampling: 8,
            power_iterations: 1,
            seed: 0,
        }
    }
}

fn apply_block<F>(apply: &mut F, x: &DMatrix<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        let y = apply(&col.into_owned());
        if y.len() != n {
            return Err(OedError::DimensionMismatch {
                context: "matrix-vector callback",
                expected: n,
                found: y.len(),
            });
        }
        out.set_column(j, &y);
    }
    Ok(out)
}

fn orthonormal_basis(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Randomized range finder with `t` power iterations followed by Rayleigh–Ritz.
///
/// `apply` computes `H̃ v`; it is called `(r + p)(t + 2)` times in sequence.
pub fn randomized_spectrum<F>(
    mut apply: F,
    n: usize,
    r: usize,
    cfg: RandomizedConfig,
) -> Result<LowRankHessian>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let k = r + cfg.oversampling;
    if k > n {
        return Err(OedError::InvalidArgument(format!(
            "rank {r} plus oversampling {} exceeds dimension {n}",
            cfg.oversampling
        )));
    }
    if r == 0 {
        return Ok(LowRankHessian::empty(n));
    }
    let mut rng = sample_rng(cfg.seed, 0);
    let omega = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = orthonormal_basis(apply_block(&mut apply, &omega)?);
    for _ in 0..cfg.power_iterations {
        q = orthonormal_basis(apply_block(&mut apply, &q)?);
    }
    let hq = apply_block(&mut apply, &q)?;
    let projected = symmetrize(&(q.transpose() * hq));
    let (values, ritz) = sorted_eigen(projected)?;
    let vectors = &q * ritz.columns(0, r);
    LowRankHessian::new(values[..r].to_vec(), vectors)
}
