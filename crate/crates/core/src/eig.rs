//! Expected information gain (EIG) of a linear-Gaussian experiment.
//!
//! The EIG is the KL divergence from posterior to prior averaged over the
//! prior and the data distribution. For linear-Gaussian problems it has the
//! closed forms
//!
//! ```text
//! EIG = ½ log det Γ_prior − ½ log det Γ_post = ½ log det(H̃ + I)
//! ```
//!
//! Both are computed here, together with a Monte Carlo estimate of the double
//! expectation that does not assume either closed form, and the trace
//! identities that connect them.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::inverse::{hessian_bundle, posterior_cov, BayesLinearProblem, PosteriorMap};
use crate::numeric::{mean_and_std_error, sample_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub seed: u64,
    pub n_samples: usize,
}

impl McConfig {
    pub fn new(seed: u64, n_samples: usize) -> Result<Self> {
        let cfg = McConfig { seed, n_samples };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(OedError::InvalidArgument(format!(
                "Monte Carlo needs at least 2 samples, got {}",
                self.n_samples
            )));
        }
        Ok(())
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    /// `|estimate − reference| ≤ k · std_error`.
    pub fn within(&self, reference: f64, k: f64) -> bool {
        (self.estimate - reference).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigReport {
    pub closed_form: f64,
    pub logdet_form: f64,
    pub mc_estimate: Option<f64>,
    pub mc_std_error: Option<f64>,
    pub mc_samples: Option<usize>,
}

impl EigReport {
    pub fn new(p: &BayesLinearProblem, mc: Option<McConfig>) -> Result<Self> {
        let closed_form = eig_closed_form(p)?;
        let logdet_form = eig_logdet_form(p)?;
        let mc = mc.map(|cfg| eig_monte_carlo(p, cfg)).transpose()?;
        Ok(EigReport {
            closed_form,
            logdet_form,
            mc_estimate: mc.map(|m| m.estimate),
            mc_std_error: mc.map(|m| m.std_error),
            mc_samples: mc.map(|m| m.samples),
        })
    }

    /// Closed forms agree to `1e-9 (1 + |value|)`.
    pub fn forms_agree(&self) -> bool {
        forms_agree(self.closed_form, self.logdet_form)
    }
}

pub fn forms_agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// `½ log det Γ_prior − ½ log det Γ_post`.
pub fn eig_closed_form(p: &BayesLinearProblem) -> Result<f64> {
    let post = posterior_cov(p)?;
    Ok(0.5 * p.prior().cov().log_det() - 0.5 * post.log_det())
}

/// `½ log det(H̃ + I)`.
pub fn eig_logdet_form(p: &BayesLinearProblem) -> Result<f64> {
    Ok(0.5 * hessian_bundle(p)?.h_tilde_plus_i.log_det())
}

/// Shared per-sample machinery for the two double-expectation estimators.
struct JointSampler<'a> {
    problem: &'a BayesLinearProblem,
    map: PosteriorMap,
}

impl<'a> JointSampler<'a> {
    fn new(problem: &'a BayesLinearProblem) -> Result<Self> {
        Ok(JointSampler {
            problem,
            map: PosteriorMap::new(problem)?,
        })
    }

    /// Draw `m ~ prior`, `y ~ N(F m, Γ_noise)` from stream `(seed, index)` and
    /// return `(m_post(y) − m_pr)ᵀ Γ_prior⁻¹ (m_post(y) − m_pr)`.
    fn prior_quadratic(&self, seed: u64, index: u64) -> f64 {
        let mut rng = sample_rng(seed, index);
        let m = self.problem.prior().draw(&mut rng);
        let y = self.problem.observe_with(&m, &mut rng);
        let shift = self
            .map
            .mean_shift(&y)
            .expect("observation has length q by construction");
        self.problem.prior().cov().inv_quad(&shift)
    }

    /// Per-sample values in index order, computed in parallel.
    fn quadratics(&self, cfg: McConfig) -> Vec<f64> {
        (0..cfg.n_samples as u64)
            .into_par_iter()
            .map(|i| self.prior_quadratic(cfg.seed, i))
            .collect()
    }
}

/// Monte Carlo estimate of `E_prior E_{y|m} KL(μ_post(y) ‖ μ_prior)`.
///
/// `Γ_post` does not depend on `y`, so the log-det ratio and trace terms of the
/// Gaussian KL are computed once; each sample contributes only the
/// mean-dependent quadratic term. Standard error is taken from the per-sample
/// KL values.
pub fn eig_monte_carlo(p: &BayesLinearProblem, cfg: McConfig) -> Result<McEstimate> {
    cfg.validate()?;
    let sampler = JointSampler::new(p)?;
    let bundle = hessian_bundle(p)?;
    let n = p.n() as f64;
    // ½[−log(det Γ_post / det Γ_prior) − n + tr(Γ_prior⁻¹ Γ_post)] in whitened form.
    let constant = 0.5 * (bundle.h_tilde_plus_i.log_det() - n + bundle.s.matrix().trace());
    let kls: Vec<f64> = sampler
        .quadratics(cfg)
        .into_iter()
        .map(|quad| constant + 0.5 * quad)
        .collect();
    let (estimate, std_error) = mean_and_std_error(&kls);
    Ok(McEstimate {
        estimate,
        std_error,
        samples: cfg.n_samples,
    })
}

/// `tr(S H̃)`, the value of the double expectation of `m_postᵀ Γ_prior⁻¹ m_post`
/// for a centered prior.
pub fn lemma_trace(p: &BayesLinearProblem) -> Result<f64> {
    let b = hessian_bundle(p)?;
    Ok(b.s.matrix().component_mul(&b.h_tilde).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub mc: McEstimate,
    pub reference: f64,
}

/// Monte Carlo average of `(m_post − m_pr)ᵀ Γ_prior⁻¹ (m_post − m_pr)` over
/// joint `(m, y)` draws, paired with `tr(S H̃)`. The trace identity is only
/// established for a centered prior, so a nonzero prior mean is rejected.
pub fn lemma_mc_check(p: &BayesLinearProblem, cfg: McConfig) -> Result<LemmaCheck> {
    cfg.validate()?;
    if p.prior().mean().iter().any(|&x| x != 0.0) {
        return Err(OedError::InvalidArgument(
            "quadratic-form check requires a zero prior mean".into(),
        ));
    }
    let sampler = JointSampler::new(p)?;
    let (estimate, std_error) = mean_and_std_error(&sampler.quadratics(cfg));
    Ok(LemmaCheck {
        mc: McEstimate {
            estimate,
            std_error,
            samples: cfg.n_samples,
        },
        reference: lemma_trace(p)?,
    })
}

/// Trace identities that the closed form rests on, evaluated numerically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceIdentities {
    /// `tr(S² H̃) + tr(S² H̃²)`
    pub inner_expectation: f64,
    /// `tr(S H̃)`
    pub s_h_tilde: f64,
    /// `tr(Γ_prior⁻¹ Γ_post)`
    pub prior_inv_post: f64,
    /// `tr(S)`
    pub s: f64,
}

impl TraceIdentities {
    pub fn new(p: &BayesLinearProblem) -> Result<Self> {
        let b = hessian_bundle(p)?;
        let s = b.s.matrix();
        let s2 = s * s;
        let ht = &b.h_tilde;
        let inner_expectation = s2.component_mul(ht).sum() + (&s2 * ht).component_mul(ht).sum();
        let s_h_tilde = s.component_mul(ht).sum();
        let post = posterior_cov(p)?;
        let prior_inv_post = p.prior().cov().solve(post.matrix()).trace();
        Ok(TraceIdentities {
            inner_expectation,
            s_h_tilde,
            prior_inv_post,
            s: s.trace(),
        })
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    /// Relative gap of `tr(S²H̃) + tr(S²H̃²) = tr(SH̃)`.
    pub fn inner_gap(&self) -> f64 {
        if self.inner_expectation == 0.0 && self.s_h_tilde == 0.0 {
            return 0.0;
        }
        Self::rel(self.inner_expectation, self.s_h_tilde)
    }

    /// Relative gap of `tr(Γ_prior⁻¹ Γ_post) = tr(S)`.
    pub fn trace_gap(&self) -> f64 {
        Self::rel(self.prior_inv_post, self.s)
    }
}

/// Convenience: posterior mean for data `y` without building a full measure.
pub fn posterior_mean(p: &BayesLinearProblem, y: &DVector<f64>) -> Result<DVector<f64>> {
    PosteriorMap::new(p)?.mean(y)
}
