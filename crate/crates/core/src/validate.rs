//! Consistency battery: every identity relating the closed forms, the
//! posterior algebra and the Monte Carlo estimators, evaluated on one problem.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::eig::{
    eig_closed_form, eig_logdet_form, eig_monte_carlo, lemma_mc_check, McConfig, TraceIdentities,
};
use crate::error::Result;
use crate::gaussian::kl_divergence;
use crate::inverse::{hessian_bundle, posterior, posterior_cov, posterior_cov_via_s, BayesLinearProblem};
use crate::lowrank::{eig_from_lowrank, truncated_spectrum, TruncationPolicy};
use crate::numeric::relative_frobenius;

/// Deterministic identities hold to this relative tolerance.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Monte Carlo estimates must fall within this many standard errors.
pub const MC_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Observed discrepancy (absolute or relative, per check).
    pub gap: f64,
    /// Threshold the gap is compared against.
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, gap: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: gap <= tolerance,
            gap,
            tolerance,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: gap {:.3e} (tol {:.3e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.gap,
            self.tolerance,
            self.detail
        )
    }
}

/// Runs the full battery on `p`.
pub fn run_checks(p: &BayesLinearProblem, cfg: McConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let closed = eig_closed_form(p)?;
    let logdet = eig_logdet_form(p)?;

    out.push(CheckResult::new(
        "theorem_equivalence",
        (closed - logdet).abs() / (1.0 + closed.abs()),
        1e-9,
        format!("closed {closed:.12} logdet {logdet:.12}"),
    ));

    let direct = posterior_cov(p)?;
    let via_s = posterior_cov_via_s(p)?;
    out.push(CheckResult::new(
        "posterior_two_route",
        relative_frobenius(via_s.matrix(), direct.matrix()),
        IDENTITY_TOL,
        "direct inverse vs prior-sqrt S prior-sqrt".into(),
    ));

    let t = TraceIdentities::new(p)?;
    out.push(CheckResult::new(
        "inner_expectation_identity",
        t.inner_gap(),
        IDENTITY_TOL,
        format!("tr(S²H̃)+tr(S²H̃²) {:.12} tr(SH̃) {:.12}", t.inner_expectation, t.s_h_tilde),
    ));
    out.push(CheckResult::new(
        "prior_trace_identity",
        t.trace_gap(),
        IDENTITY_TOL,
        format!("tr(Γ_prior⁻¹Γ_post) {:.12} tr(S) {:.12}", t.prior_inv_post, t.s),
    ));
    let n = p.n() as f64;
    out.push(CheckResult::new(
        "lemma_trace_identity",
        (t.s_h_tilde - (n - t.s)).abs() / n,
        IDENTITY_TOL,
        "tr(SH̃) = n − tr(S)".into(),
    ));

    let mc = eig_monte_carlo(p, cfg)?;
    out.push(CheckResult::new(
        "eig_monte_carlo",
        standardized(mc.estimate, closed, mc.std_error),
        MC_SIGMAS,
        format!(
            "estimate {:.6} ± {:.2e} vs {closed:.6} ({} samples)",
            mc.estimate, mc.std_error, mc.samples
        ),
    ));

    let centered = p.with_prior_mean(DVector::zeros(p.n()))?;
    let lemma = lemma_mc_check(&centered, cfg)?;
    out.push(CheckResult::new(
        "lemma_monte_carlo",
        standardized(lemma.mc.estimate, lemma.reference, lemma.mc.std_error),
        MC_SIGMAS,
        format!(
            "estimate {:.6} ± {:.2e} vs tr(SH̃) {:.6} (prior mean set to zero)",
            lemma.mc.estimate, lemma.mc.std_error, lemma.reference
        ),
    ));

    let y = p.observe(p.prior().mean(), cfg.seed, u64::MAX)?;
    let post = posterior(p, &y)?;
    let self_kl = kl_divergence(p.prior(), p.prior())?.abs();
    let pair_kl = kl_divergence(&post, p.prior())?;
    out.push(CheckResult::new(
        "kl_nonnegative",
        self_kl.max(-pair_kl),
        1e-12,
        format!("KL(prior‖prior) {self_kl:.3e}, KL(post‖prior) {pair_kl:.6}"),
    ));

    let shift = DVector::from_fn(p.n(), |i, _| 1.0 + i as f64);
    let shifted = p.with_prior_mean(p.prior().mean() + shift)?;
    let mean_gap = (eig_closed_form(&shifted)? - closed)
        .abs()
        .max((eig_logdet_form(&shifted)? - logdet).abs());
    out.push(CheckResult::new(
        "prior_mean_invariance",
        mean_gap,
        IDENTITY_TOL,
        "EIG after shifting the prior mean".into(),
    ));

    let mut scale_gap: f64 = 0.0;
    for c in [1e-3, 1.0, 1e3] {
        let scaled = p.rescaled_noise(c)?;
        scale_gap = scale_gap
            .max((eig_closed_form(&scaled)? - closed).abs())
            .max((eig_logdet_form(&scaled)? - logdet).abs());
    }
    out.push(CheckResult::new(
        "noise_scaling_invariance",
        scale_gap,
        IDENTITY_TOL,
        "Γ_noise → cΓ_noise, F → √c F, c ∈ {1e-3, 1, 1e3}".into(),
    ));

    let bundle = hessian_bundle(p)?;
    let full = truncated_spectrum(&bundle.h_tilde, TruncationPolicy::Rank(p.n()))?;
    let lr = eig_from_lowrank(&full);
    out.push(CheckResult::new(
        "lowrank_full_rank",
        (lr - logdet).abs(),
        IDENTITY_TOL,
        format!("½Σlog(1+λ) {lr:.12}"),
    ));
    Ok(out)
}

fn standardized(estimate: f64, reference: f64, std_error: f64) -> f64 {
    let d = (estimate - reference).abs();
    if d == 0.0 {
        0.0
    } else if std_error == 0.0 {
        f64::MAX
    } else {
        d / std_error
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{random_pool, RandomParams};

    #[test]
    fn battery_passes_on_generated_problem() {
        let pool = random_pool(RandomParams::new(4, 5), 3).unwrap();
        let p = pool.full_problem().unwrap();
        let checks = run_checks(&p, McConfig::new(1, 50_000).unwrap()).unwrap();
        assert_eq!(checks.len(), 11);
        for c in &checks {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn standardized_gap_edge_cases() {
        assert_eq!(standardized(1.0, 1.0, 0.0), 0.0);
        assert_eq!(standardized(1.0, 2.0, 0.0), f64::MAX);
        assert_eq!(standardized(1.0, 2.0, 0.5), 2.0);
    }
}
