//! Gaussian measures on `R^n`: SPD matrices with a cached Cholesky factor,
//! KL divergence, quadratic-form expectations and reproducible sampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_dim, OedError, Result};
use crate::numeric::{sample_rng, symmetrize};

/// Relative Frobenius asymmetry accepted by [`SpdMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dense symmetric positive definite matrix together with its lower
/// Cholesky factor `L` (`M = L Lᵀ`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates and factorizes `m`. Inputs that are asymmetric beyond
    /// [`SYMMETRY_TOL`] or not positive definite are rejected; no jitter is added.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_jitter(m, 0.0)
    }

    /// Like [`SpdMatrix::new`] but adds `delta * I` before factorizing.
    pub fn with_jitter(m: DMatrix<f64>, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(OedError::InvalidArgument(format!(
                "jitter must be finite and nonnegative, got {delta}"
            )));
        }
        if !m.is_square() {
            return Err(OedError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(OedError::InvalidArgument("empty matrix".into()));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(OedError::NonFinite);
        }
        let norm = m.norm();
        let asym = (&m - m.transpose()).norm();
        let asymmetry = if norm > 0.0 { asym / norm } else { asym };
        if asymmetry > SYMMETRY_TOL {
            return Err(OedError::NotSymmetric {
                asymmetry,
                tolerance: SYMMETRY_TOL,
            });
        }
        let mut mat = symmetrize(&m);
        if delta > 0.0 {
            for i in 0..mat.nrows() {
                mat[(i, i)] += delta;
            }
        }
        let chol = nalgebra::Cholesky::new(mat.clone()).ok_or(OedError::NotPositiveDefinite)?;
        let factor = chol.unpack();
        if factor.diagonal().iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(OedError::NotPositiveDefinite);
        }
        Ok(SpdMatrix { mat, factor })
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix {
            mat: DMatrix::identity(n, n),
            factor: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Symmetrizes a computed result (an inverse, a product `R S R`) before
    /// validating it; round-off asymmetry of such matrices is not an input error.
    pub(crate) fn from_computed(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(symmetrize(m))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Lower-triangular Cholesky factor.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹ B`.
    pub fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `L⁻¹ v`.
    pub fn whiten_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.factor
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `M⁻¹ B` via two triangular solves.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.whiten(b);
        self.factor
            .tr_solve_lower_triangular(&w)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let w = self.whiten_vec(v);
        self.factor
            .tr_solve_lower_triangular(&w)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `vᵀ M⁻¹ v = ‖L⁻¹ v‖²`.
    pub fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        self.whiten_vec(v).norm_squared()
    }

    /// Explicit inverse, symmetrized. Only for callers that need the n×n result.
    ///
    /// One step of iterative refinement `X += X (I − M X)` follows the
    /// triangular solves.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let eye = DMatrix::identity(n, n);
        let x = self.solve(&eye);
        let residual = &eye - &self.mat * &x;
        symmetrize(&(&x + &x * residual))
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(OedError::InvalidArgument(format!(
                "scale must be positive, got {c}"
            )));
        }
        Self::new(&self.mat * c)
    }
}

/// `log det m` from the Cholesky factor.
pub fn log_det(m: &SpdMatrix) -> f64 {
    m.log_det()
}

/// Symmetric square root `R = V Λ^{1/2} Vᵀ` with `R R = m`.
pub fn symmetric_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = SymmetricEigen::new(m.matrix().clone());
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(OedError::NonFinite);
    }
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(OedError::NotPositiveDefinite);
    }
    let root = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&root) * v.transpose();
    SpdMatrix::from_computed(&r)
}

/// Square matrix acting as a quadratic form; no symmetry assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator(DMatrix<f64>);

impl LinearOperator {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(OedError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        Ok(LinearOperator(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn symmetric_part(&self) -> LinearOperator {
        LinearOperator(symmetrize(&self.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: SpdMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        check_dim("gaussian mean", cov.dim(), mean.len())?;
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(OedError::NonFinite);
        }
        Ok(GaussianMeasure { mean, cov })
    }

    pub fn centered(cov: SpdMatrix) -> Self {
        let n = cov.dim();
        GaussianMeasure {
            mean: DVector::zeros(n),
            cov,
        }
    }

    pub fn standard(n: usize) -> Self {
        Self::centered(SpdMatrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        Self::new(mean, self.cov.clone())
    }

    /// One draw `mean + L z` using `rng` for the standard normal vector `z`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.cov.factor() * z
    }

    /// Draw `i` of the `(seed, i)` keyed sequence.
    pub fn draw_indexed(&self, seed: u64, index: u64) -> DVector<f64> {
        self.draw(&mut sample_rng(seed, index))
    }
}

/// KL divergence `D(mu1 ‖ mu2)` between Gaussians.
pub fn kl_divergence(mu1: &GaussianMeasure, mu2: &GaussianMeasure) -> Result<f64> {
    check_dim("kl_divergence", mu2.dim(), mu1.dim())?;
    let n = mu1.dim() as f64;
    let log_ratio = mu1.cov.log_det() - mu2.cov.log_det();
    // tr(Σ₂⁻¹Σ₁) = ‖L₂⁻¹ L₁‖²_F
    let trace = mu2.cov.whiten(mu1.cov.factor()).norm_squared();
    let diff = &mu1.mean - &mu2.mean;
    let maha = mu2.cov.inv_quad(&diff);
    Ok(0.5 * (-log_ratio - n + trace + maha))
}

/// `E_mu[xᵀ Q x] = tr(Q C) + aᵀ Q a`. Only the symmetric part of `Q` is used.
pub fn expect_quadratic(mu: &GaussianMeasure, q: &LinearOperator) -> Result<f64> {
    check_dim("expect_quadratic", mu.dim(), q.dim())?;
    let qs = q.symmetric_part();
    let qs = qs.matrix();
    let c = mu.cov.matrix();
    let trace = qs.component_mul(c).sum();
    let a = &mu.mean;
    Ok(trace + a.dot(&(qs * a)))
}

/// `count` draws from `mu`; draw `i` uses the stream keyed by `(seed, i)`, so the
/// output does not depend on thread count or chunking.
pub fn sample(mu: &GaussianMeasure, seed: u64, count: usize) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(OedError::InvalidArgument("sample count must be >= 1".into()));
    }
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| mu.draw_indexed(seed, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::mean_and_std_error;
    use nalgebra::dmatrix;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_spd(n: usize, seed: u64) -> SpdMatrix {
        let mut rng = sample_rng(seed, 0);
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        SpdMatrix::from_computed(&(a.transpose() * &a / n as f64 + DMatrix::identity(n, n) * 0.1))
            .unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = sample_rng(seed, 1);
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn spd_construction_rejects_bad_input() {
        assert!(matches!(
            SpdMatrix::new(dmatrix![1.0, 0.5; 0.0, 1.0]),
            Err(OedError::NotSymmetric { .. })
        ));
        assert!(matches!(
            SpdMatrix::new(dmatrix![1.0, 0.0; 0.0, -1.0]),
            Err(OedError::NotPositiveDefinite)
        ));
        assert!(matches!(
            SpdMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]),
            Err(OedError::NotPositiveDefinite)
        ));
        assert!(matches!(
            SpdMatrix::new(DMatrix::zeros(2, 3)),
            Err(OedError::NotSquare { .. })
        ));
        assert!(matches!(
            SpdMatrix::new(dmatrix![f64::NAN]),
            Err(OedError::NonFinite)
        ));
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        assert!(SpdMatrix::new(m.clone()).is_err());
        let j = SpdMatrix::with_jitter(m, 1e-6).unwrap();
        assert_eq!(j.matrix()[(0, 0)], 1.0 + 1e-6);
        assert!(SpdMatrix::with_jitter(dmatrix![1.0], -1.0).is_err());
    }

    #[test]
    fn tiny_asymmetry_is_symmetrized() {
        let m = dmatrix![2.0, 1.0 + 1e-14; 1.0, 2.0];
        let s = SpdMatrix::new(m).unwrap();
        assert_eq!(s.matrix()[(0, 1)], s.matrix()[(1, 0)]);
    }

    #[test]
    fn factor_reconstructs() {
        let a = random_spd(7, 11);
        let l = a.factor();
        let err = (l * l.transpose() - a.matrix()).norm();
        assert!(err <= 1e-10 * a.matrix().norm());
        assert!(l.upper_triangle().iter().enumerate().all(|(k, &x)| {
            let (i, j) = (k % 7, k / 7);
            i >= j || x == 0.0
        }));
    }

    #[test]
    fn log_det_examples() {
        assert_eq!(log_det(&SpdMatrix::identity(3)), 0.0);
        let d = SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap();
        assert!(close(log_det(&d), 2.0 * 2f64.ln(), 1e-15));
    }

    #[test]
    fn log_det_matches_lu_oracle() {
        let a = random_spd(5, 3);
        let det = a.matrix().clone().lu().determinant();
        assert!(close(log_det(&a), det.ln(), 1e-10));
    }

    #[test]
    fn kl_examples() {
        let i3 = GaussianMeasure::standard(3);
        assert_eq!(kl_divergence(&i3, &i3).unwrap(), 0.0);

        let one = SpdMatrix::identity(1);
        let a = GaussianMeasure::new(DVector::from_element(1, 1.0), one.clone()).unwrap();
        let b = GaussianMeasure::centered(one);
        assert!(close(kl_divergence(&a, &b).unwrap(), 0.5, 1e-15));

        let wide = GaussianMeasure::centered(SpdMatrix::from_diagonal(&[2.0]).unwrap());
        let std = GaussianMeasure::standard(1);
        assert!(close(
            kl_divergence(&wide, &std).unwrap(),
            0.5 * (1.0 - 2f64.ln()),
            1e-15
        ));

        assert!(matches!(
            kl_divergence(&i3, &std),
            Err(OedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kl_against_direct_formula() {
        let s1 = random_spd(4, 5);
        let s2 = random_spd(4, 6);
        let mu1 = GaussianMeasure::new(random_vec(4, 7), s1.clone()).unwrap();
        let mu2 = GaussianMeasure::new(random_vec(4, 8), s2.clone()).unwrap();
        let inv2 = s2.matrix().clone().try_inverse().unwrap();
        let d = mu1.mean() - mu2.mean();
        let direct = 0.5
            * (-(s1.matrix().determinant() / s2.matrix().determinant()).ln() - 4.0
                + (&inv2 * s1.matrix()).trace()
                + d.dot(&(&inv2 * &d)));
        assert!(close(kl_divergence(&mu1, &mu2).unwrap(), direct, 1e-10));
    }

    #[test]
    fn expect_quadratic_examples() {
        let i3 = GaussianMeasure::standard(3);
        let q = LinearOperator::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(expect_quadratic(&i3, &q).unwrap(), 3.0);

        let shifted =
            GaussianMeasure::new(DVector::from_element(2, 1.0), SpdMatrix::identity(2)).unwrap();
        let q2 = LinearOperator::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(expect_quadratic(&shifted, &q2).unwrap(), 4.0);
        assert!(expect_quadratic(&shifted, &q).is_err());
        assert!(LinearOperator::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn expect_quadratic_matches_monte_carlo() {
        let mu = GaussianMeasure::new(random_vec(4, 21), random_spd(4, 22)).unwrap();
        let mut rng = sample_rng(23, 0);
        let q = LinearOperator::new(DMatrix::from_fn(4, 4, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap();
        let vals: Vec<f64> = sample(&mu, 99, 1_000_000)
            .unwrap()
            .iter()
            .map(|x| x.dot(&(q.matrix() * x)))
            .collect();
        let (est, se) = mean_and_std_error(&vals);
        let exact = expect_quadratic(&mu, &q).unwrap();
        assert!((est - exact).abs() <= 3.0 * se, "{est} vs {exact} (se {se})");
    }

    #[test]
    fn sample_mean_and_variance() {
        let mu = GaussianMeasure::standard(2);
        let xs = sample(&mu, 5, 100_000).unwrap();
        for k in 0..2 {
            let m = xs.iter().map(|x| x[k]).sum::<f64>() / xs.len() as f64;
            assert!(m.abs() <= 3.0 / (1e5f64).sqrt(), "coordinate {k}: {m}");
        }

        let mu = GaussianMeasure::new(
            DVector::from_vec(vec![1.0, -2.0]),
            SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap(),
        )
        .unwrap();
        let xs = sample(&mu, 6, 1_000_000).unwrap();
        let v = xs.iter().map(|x| (x[0] - 1.0).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((v - 4.0).abs() <= 0.05 * 4.0, "variance {v}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let mu = GaussianMeasure::new(random_vec(3, 1), random_spd(3, 2)).unwrap();
        assert_eq!(sample(&mu, 42, 1).unwrap(), sample(&mu, 42, 1).unwrap());
        let long = sample(&mu, 42, 100).unwrap();
        assert_eq!(long[0], sample(&mu, 42, 1).unwrap()[0]);
        assert_eq!(long[57], mu.draw_indexed(42, 57));
        assert!(sample(&mu, 42, 0).is_err());
    }

    #[test]
    fn symmetric_sqrt_examples() {
        let r = symmetric_sqrt(&SpdMatrix::identity(3)).unwrap();
        assert!((r.matrix() - DMatrix::identity(3, 3)).norm() <= 1e-15);

        let r = symmetric_sqrt(&SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap()).unwrap();
        assert!((r.matrix() - dmatrix![2.0, 0.0; 0.0, 3.0]).norm() <= 1e-14);

        let a = random_spd(6, 31);
        let r = symmetric_sqrt(&a).unwrap();
        let err = (r.matrix() * r.matrix() - a.matrix()).norm();
        assert!(err <= 1e-10 * a.matrix().norm());
        assert_eq!(r.matrix(), &r.matrix().transpose());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kl_self_is_zero_and_pairs_nonnegative(n in 1usize..7, s1 in any::<u64>(), s2 in any::<u64>()) {
            let mu = GaussianMeasure::new(random_vec(n, s1), random_spd(n, s1)).unwrap();
            let nu = GaussianMeasure::new(random_vec(n, s2), random_spd(n, s2)).unwrap();
            prop_assert!(kl_divergence(&mu, &mu).unwrap().abs() <= 1e-12);
            prop_assert!(kl_divergence(&mu, &nu).unwrap() >= -1e-12);
            prop_assert!(kl_divergence(&nu, &mu).unwrap() >= -1e-12);
        }

        #[test]
        fn quadratic_sees_only_symmetric_part(n in 1usize..7, seed in any::<u64>()) {
            let mu = GaussianMeasure::new(random_vec(n, seed), random_spd(n, seed ^ 1)).unwrap();
            let mut rng = sample_rng(seed, 9);
            let q = LinearOperator::new(DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal))).unwrap();
            prop_assert_eq!(
                expect_quadratic(&mu, &q).unwrap(),
                expect_quadratic(&mu, &q.symmetric_part()).unwrap()
            );
        }

        #[test]
        fn log_det_scales(n in 1usize..9, seed in any::<u64>(), c in 1e-3f64..1e3) {
            let a = random_spd(n, seed);
            let scaled = a.scaled(c).unwrap();
            prop_assert!((log_det(&scaled) - (log_det(&a) + n as f64 * c.ln())).abs() <= 1e-10);
        }
    }
}
