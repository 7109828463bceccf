//! The linear-Gaussian inverse problem `y = F m + η`, `η ~ N(0, Γ_noise)`,
//! `m ~ N(m_pr, Γ_prior)`, and its posterior/Hessian algebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, OedError, Result};
use crate::gaussian::{symmetric_sqrt, GaussianMeasure, SpdMatrix};
use crate::numeric::{sample_rng, symmetrize};

/// Parameter-to-observable map `F: R^n -> R^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    matrix: DMatrix<f64>,
}

impl ForwardModel {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(OedError::InvalidArgument(format!(
                "forward map must be at least 1x1, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(OedError::NonFinite);
        }
        Ok(ForwardModel { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of observations.
    pub fn q(&self) -> usize {
        self.matrix.nrows()
    }

    /// Parameter dimension.
    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesLinearProblem {
    forward: ForwardModel,
    noise_cov: SpdMatrix,
    prior: GaussianMeasure,
}

impl BayesLinearProblem {
    pub fn new(forward: ForwardModel, noise_cov: SpdMatrix, prior: GaussianMeasure) -> Result<Self> {
        check_dim("noise covariance", forward.q(), noise_cov.dim())?;
        check_dim("prior", forward.n(), prior.dim())?;
        Ok(BayesLinearProblem {
            forward,
            noise_cov,
            prior,
        })
    }

    pub fn forward(&self) -> &ForwardModel {
        &self.forward
    }

    pub fn noise_cov(&self) -> &SpdMatrix {
        &self.noise_cov
    }

    pub fn prior(&self) -> &GaussianMeasure {
        &self.prior
    }

    pub fn n(&self) -> usize {
        self.forward.n()
    }

    pub fn q(&self) -> usize {
        self.forward.q()
    }

    pub fn with_prior_mean(&self, mean: DVector<f64>) -> Result<Self> {
        Self::new(
            self.forward.clone(),
            self.noise_cov.clone(),
            self.prior.with_mean(mean)?,
        )
    }

    /// `Γ_noise -> c Γ_noise`, `F -> √c F`; leaves `H` unchanged.
    pub fn rescaled_noise(&self, c: f64) -> Result<Self> {
        Self::new(
            ForwardModel::new(self.forward.matrix() * c.sqrt())?,
            self.noise_cov.scaled(c)?,
            self.prior.clone(),
        )
    }

    /// Data-misfit Hessian `H = Fᵀ Γ_noise⁻¹ F`, formed as `WᵀW` with `W = L_noise⁻¹ F`.
    pub fn misfit_hessian(&self) -> DMatrix<f64> {
        let w = self.noise_cov.whiten(self.forward.matrix());
        symmetrize(&(w.transpose() * w))
    }

    /// Synthetic observation `y = F m_true + η`, `η` drawn from the `(seed, index)` stream.
    pub fn observe(&self, m_true: &DVector<f64>, seed: u64, index: u64) -> Result<DVector<f64>> {
        check_dim("parameter", self.n(), m_true.len())?;
        let mut rng = sample_rng(seed, index);
        Ok(self.observe_with(m_true, &mut rng))
    }

    pub(crate) fn observe_with<R: Rng + ?Sized>(
        &self,
        m_true: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let noise = GaussianMeasure::centered(self.noise_cov.clone());
        let eta = noise.draw(rng);
        self.forward.matrix() * m_true + eta
    }
}

/// `H`, the prior-preconditioned `H̃ = Γ_prior^{1/2} H Γ_prior^{1/2}` and
/// `S = (H̃ + I)⁻¹`.
#[derive(Debug, Clone)]
pub struct HessianBundle {
    pub h: DMatrix<f64>,
    pub h_tilde: DMatrix<f64>,
    pub s: SpdMatrix,
    /// `H̃ + I`, factorized.
    pub h_tilde_plus_i: SpdMatrix,
    /// Symmetric square root of the prior covariance used to build `H̃`.
    pub prior_sqrt: SpdMatrix,
}

pub fn hessian_bundle(p: &BayesLinearProblem) -> Result<HessianBundle> {
    let h = p.misfit_hessian();
    let prior_sqrt = symmetric_sqrt(p.prior().cov())?;
    let r = prior_sqrt.matrix();
    let h_tilde = symmetrize(&(r * &h * r));
    let n = p.n();
    let h_tilde_plus_i = SpdMatrix::new(&h_tilde + DMatrix::identity(n, n))?;
    let s = SpdMatrix::from_computed(&h_tilde_plus_i.inverse())?;
    Ok(HessianBundle {
        h,
        h_tilde,
        s,
        h_tilde_plus_i,
        prior_sqrt,
    })
}

/// Posterior covariance `(H + Γ_prior⁻¹)⁻¹`, formed directly.
pub fn posterior_cov(p: &BayesLinearProblem) -> Result<SpdMatrix> {
    let h = p.misfit_hessian();
    if h.iter().all(|&x| x == 0.0) {
        // No data information: the posterior is the prior, bit for bit.
        return Ok(p.prior().cov().clone());
    }
    let precision = SpdMatrix::from_computed(&(h + p.prior().cov().inverse()))?;
    SpdMatrix::from_computed(&precision.inverse())
}

/// Posterior covariance through the whitened route `Γ_prior^{1/2} S Γ_prior^{1/2}`.
pub fn posterior_cov_via_s(p: &BayesLinearProblem) -> Result<SpdMatrix> {
    let b = hessian_bundle(p)?;
    let r = b.prior_sqrt.matrix();
    SpdMatrix::from_computed(&(r * b.s.matrix() * r))
}

/// The data-independent part of the posterior: `Γ_post` and the gain
/// `K = Γ_post Fᵀ Γ_noise⁻¹`, so that `m_post(y) = m_pr + K (y − F m_pr)`.
#[derive(Debug, Clone)]
pub struct PosteriorMap {
    cov: SpdMatrix,
    gain: DMatrix<f64>,
    prior_mean: DVector<f64>,
    forward: DMatrix<f64>,
}

impl PosteriorMap {
    pub fn new(p: &BayesLinearProblem) -> Result<Self> {
        let cov = posterior_cov(p)?;
        let gain = cov.matrix() * p.noise_cov().solve(p.forward().matrix()).transpose();
        Ok(PosteriorMap {
            cov,
            gain,
            prior_mean: p.prior().mean().clone(),
            forward: p.forward().matrix().clone(),
        })
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// `m_post(y) − m_pr = K (y − F m_pr)`.
    pub fn mean_shift(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("observation", self.forward.nrows(), y.len())?;
        let residual = y - &self.forward * &self.prior_mean;
        Ok(&self.gain * residual)
    }

    pub fn mean(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.prior_mean + self.mean_shift(y)?)
    }

    pub fn measure(&self, y: &DVector<f64>) -> Result<GaussianMeasure> {
        GaussianMeasure::new(self.mean(y)?, self.cov.clone())
    }
}

/// Posterior measure given data `y`. The mean is
/// `Γ_post (Fᵀ Γ_noise⁻¹ y + Γ_prior⁻¹ m_pr)`, evaluated as `m_pr + K (y − F m_pr)`.
pub fn posterior(p: &BayesLinearProblem, y: &DVector<f64>) -> Result<GaussianMeasure> {
    check_dim("observation", p.q(), y.len())?;
    PosteriorMap::new(p)?.measure(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::relative_frobenius;
    use nalgebra::dmatrix;
    use rand_distr::StandardNormal;

    fn scalar_problem() -> BayesLinearProblem {
        BayesLinearProblem::new(
            ForwardModel::new(dmatrix![1.0]).unwrap(),
            SpdMatrix::identity(1),
            GaussianMeasure::standard(1),
        )
        .unwrap()
    }

    fn random_problem(n: usize, q: usize, seed: u64) -> BayesLinearProblem {
        let mut rng = sample_rng(seed, 0);
        let mut g = |r, c| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = g(q, n);
        let a = g(n, n);
        let b = g(q, q);
        let mean = g(n, 1).column(0).into_owned();
        let prior = SpdMatrix::from_computed(&(a.transpose() * &a / n as f64 + DMatrix::identity(n, n) * 0.1))
            .unwrap();
        let noise = SpdMatrix::from_computed(&(b.transpose() * &b / q as f64 + DMatrix::identity(q, q) * 0.2))
            .unwrap();
        BayesLinearProblem::new(
            ForwardModel::new(f).unwrap(),
            noise,
            GaussianMeasure::new(mean, prior).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn construction_checks_dimensions() {
        let f = ForwardModel::new(DMatrix::zeros(3, 2)).unwrap();
        assert!(BayesLinearProblem::new(f.clone(), SpdMatrix::identity(2), GaussianMeasure::standard(2)).is_err());
        assert!(BayesLinearProblem::new(f, SpdMatrix::identity(3), GaussianMeasure::standard(3)).is_err());
        assert!(ForwardModel::new(DMatrix::zeros(0, 2)).is_err());
        assert!(ForwardModel::new(dmatrix![f64::INFINITY]).is_err());
    }

    #[test]
    fn scalar_bundle() {
        let b = hessian_bundle(&scalar_problem()).unwrap();
        assert_eq!(b.h[(0, 0)], 1.0);
        assert_eq!(b.h_tilde[(0, 0)], 1.0);
        assert_eq!(b.s.matrix()[(0, 0)], 0.5);
    }

    #[test]
    fn zero_forward_bundle() {
        let p = BayesLinearProblem::new(
            ForwardModel::new(DMatrix::zeros(4, 3)).unwrap(),
            SpdMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            GaussianMeasure::centered(SpdMatrix::from_diagonal(&[2.0, 3.0, 5.0]).unwrap()),
        )
        .unwrap();
        let b = hessian_bundle(&p).unwrap();
        assert_eq!(b.h, DMatrix::zeros(3, 3));
        assert_eq!(b.h_tilde, DMatrix::zeros(3, 3));
        assert_eq!(b.s.matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn s_inverts_h_tilde_plus_identity() {
        let p = random_problem(4, 6, 17);
        let b = hessian_bundle(&p).unwrap();
        let prod = b.s.matrix() * (&b.h_tilde + DMatrix::identity(4, 4));
        assert!(relative_frobenius(&prod, &DMatrix::identity(4, 4)) <= 1e-10);
        let eig = b.h_tilde.clone().symmetric_eigenvalues();
        let top = eig.amax();
        assert!(eig.iter().all(|&l| l >= -1e-10 * top));
    }

    #[test]
    fn scalar_posterior() {
        let post = posterior(&scalar_problem(), &DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(post.mean()[0], 1.0);
        assert_eq!(post.cov().matrix()[(0, 0)], 0.5);
        assert_eq!(posterior_cov_via_s(&scalar_problem()).unwrap().matrix()[(0, 0)], 0.5);
    }

    #[test]
    fn zero_data_zero_prior_mean_gives_zero_mean() {
        let p = random_problem(3, 5, 2);
        let p = p.with_prior_mean(DVector::zeros(3)).unwrap();
        let post = posterior(&p, &DVector::zeros(5)).unwrap();
        assert_eq!(post.mean(), &DVector::zeros(3));
        assert!(posterior(&p, &DVector::zeros(4)).is_err());
    }

    #[test]
    fn posterior_mean_minimizes_regularized_misfit() {
        // Normal equations of ½‖Γ_n^{-1/2}(Fm−y)‖² + ½‖Γ_pr^{-1/2}(m−m_pr)‖², via LU.
        let p = random_problem(3, 5, 8);
        let y = p.observe(&DVector::from_vec(vec![0.3, -1.0, 2.0]), 1, 0).unwrap();
        let f = p.forward().matrix();
        let noise_inv = p.noise_cov().matrix().clone().try_inverse().unwrap();
        let prior_inv = p.prior().cov().matrix().clone().try_inverse().unwrap();
        let lhs = f.transpose() * &noise_inv * f + &prior_inv;
        let rhs = f.transpose() * &noise_inv * &y + &prior_inv * p.prior().mean();
        let oracle = lhs.lu().solve(&rhs).unwrap();
        let post = posterior(&p, &y).unwrap();
        assert!((post.mean() - &oracle).norm() <= 1e-9 * (1.0 + oracle.norm()));
    }

    #[test]
    fn posterior_cov_routes_agree() {
        let p = random_problem(5, 4, 23);
        let direct = posterior_cov(&p).unwrap();
        let via_s = posterior_cov_via_s(&p).unwrap();
        assert!(relative_frobenius(via_s.matrix(), direct.matrix()) <= 1e-10);

        let white = BayesLinearProblem::new(
            p.forward().clone(),
            p.noise_cov().clone(),
            GaussianMeasure::standard(5),
        )
        .unwrap();
        let b = hessian_bundle(&white).unwrap();
        assert_eq!(posterior_cov_via_s(&white).unwrap().matrix(), b.s.matrix());
    }

    #[test]
    fn posterior_never_exceeds_prior() {
        let p = random_problem(5, 3, 41);
        let b = hessian_bundle(&p).unwrap();
        // Γ_pr^{-1/2} Γ_post Γ_pr^{-1/2} = S
        for l in b.s.matrix().clone().symmetric_eigenvalues().iter() {
            assert!(*l > 0.0 && *l <= 1.0 + 1e-12);
        }
        let trace = (p.prior().cov().solve(posterior_cov(&p).unwrap().matrix())).trace();
        assert!((trace - b.s.matrix().trace()).abs() <= 1e-10 * trace.abs());
    }

    #[test]
    fn posterior_mean_is_affine_in_data() {
        let p = random_problem(4, 6, 5);
        let y1 = p.observe(&DVector::from_element(4, 1.0), 3, 0).unwrap();
        let y2 = p.observe(&DVector::from_element(4, -0.5), 3, 1).unwrap();
        let m = |y: &DVector<f64>| posterior(&p, y).unwrap().mean().clone();
        let lhs = m(&(&y1 + &y2));
        let rhs = m(&y1) + m(&y2) - m(&DVector::zeros(6));
        assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn noise_rescaling_keeps_hessian() {
        let p = random_problem(3, 4, 9);
        for c in [1e-3, 1.0, 1e3] {
            let h = p.rescaled_noise(c).unwrap().misfit_hessian();
            assert!(relative_frobenius(&h, &p.misfit_hessian()) <= 1e-10);
        }
    }
}
