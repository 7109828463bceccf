//! Bayesian D-optimal sensor selection.
//!
//! A design picks a subset of rows from a pool of candidate observation
//! functionals, each with independent noise. The restricted problem's EIG,
//! `½ log det(H̃(d) + I)`, is the objective to maximize.

use itertools::Itertools;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eig::eig_logdet_form;
use crate::error::{check_dim, OedError, Result};
use crate::gaussian::{symmetric_sqrt, GaussianMeasure, SpdMatrix};
use crate::inverse::{BayesLinearProblem, ForwardModel};

/// Gains closer than this are treated as ties; the lower index wins.
pub const TIE_TOL: f64 = 1e-12;

/// Largest number of designs [`exhaustive`] will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    rows: DMatrix<f64>,
    noise_variances: Vec<f64>,
    prior: GaussianMeasure,
    labels: Option<Vec<String>>,
}

impl CandidatePool {
    pub fn new(
        rows: DMatrix<f64>,
        noise_variances: Vec<f64>,
        prior: GaussianMeasure,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(OedError::InvalidArgument("candidate pool is empty".into()));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(OedError::NonFinite);
        }
        check_dim("candidate rows", prior.dim(), rows.ncols())?;
        check_dim("noise variances", rows.nrows(), noise_variances.len())?;
        if let Some(i) = noise_variances.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(OedError::InvalidArgument(format!(
                "noise variance of candidate {i} must be positive, got {}",
                noise_variances[i]
            )));
        }
        if let Some(labels) = &labels {
            check_dim("candidate labels", rows.nrows(), labels.len())?;
        }
        Ok(CandidatePool {
            rows,
            noise_variances,
            prior,
            labels,
        })
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }

    pub fn prior(&self) -> &GaussianMeasure {
        &self.prior
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Number of candidates.
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter dimension.
    pub fn n(&self) -> usize {
        self.rows.ncols()
    }

    /// The problem observing every candidate.
    pub fn full_problem(&self) -> Result<BayesLinearProblem> {
        restrict(self, &Design::all(self.len()))
    }

    /// Reorders candidates so that new candidate `i` is old candidate `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_dim("permutation", self.len(), perm.len())?;
        if !perm.iter().copied().sorted().eq(0..self.len()) {
            return Err(OedError::InvalidArgument("not a permutation".into()));
        }
        Self::new(
            self.rows.select_rows(perm),
            perm.iter().map(|&i| self.noise_variances[i]).collect(),
            self.prior.clone(),
            self.labels
                .as_ref()
                .map(|l| perm.iter().map(|&i| l[i].clone()).collect()),
        )
    }

    /// Rows in prior-whitened, noise-scaled form: `gᵢ = Γ_prior^{1/2} fᵢ / σᵢ`,
    /// so that `H̃(d) = Σ_{i∈d} gᵢ gᵢᵀ`. Returned as columns of an n×q matrix.
    pub fn whitened_rows(&self) -> Result<DMatrix<f64>> {
        let root = symmetric_sqrt(self.prior.cov())?;
        let mut g = root.matrix() * self.rows.transpose();
        for (j, mut col) in g.column_iter_mut().enumerate() {
            col /= self.noise_variances[j].sqrt();
        }
        Ok(g)
    }
}

/// Binary selection over the candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Design {
    selected: Vec<bool>,
}

impl Design {
    pub fn new(selected: Vec<bool>) -> Self {
        Design { selected }
    }

    pub fn all(q: usize) -> Self {
        Design::new(vec![true; q])
    }

    pub fn empty(q: usize) -> Self {
        Design::new(vec![false; q])
    }

    pub fn from_indices(q: usize, indices: &[usize]) -> Result<Self> {
        let mut selected = vec![false; q];
        for &i in indices {
            if i >= q {
                return Err(OedError::InvalidArgument(format!(
                    "candidate index {i} out of range for pool of {q}"
                )));
            }
            if selected[i] {
                return Err(OedError::InvalidArgument(format!(
                    "candidate {i} selected twice"
                )));
            }
            selected[i] = true;
        }
        Ok(Design { selected })
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Entrywise `self ≤ other`.
    pub fn is_subset_of(&self, other: &Design) -> bool {
        self.len() == other.len() && self.selected.iter().zip(&other.selected).all(|(&a, &b)| !a || b)
    }

    fn with(&self, i: usize, value: bool) -> Design {
        let mut d = self.clone();
        d.selected[i] = value;
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub added: usize,
    /// Candidate dropped in an exchange move; `None` for greedy additions.
    pub removed: Option<usize>,
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub design: Design,
    pub criterion: f64,
    pub trace: Vec<TraceStep>,
}

/// The inverse problem that observes only the selected candidates. An empty
/// selection yields a single zero row with unit variance: no data, zero EIG.
pub fn restrict(pool: &CandidatePool, d: &Design) -> Result<BayesLinearProblem> {
    check_dim("design", pool.len(), d.len())?;
    let idx = d.indices();
    let (rows, variances) = if idx.is_empty() {
        (DMatrix::zeros(1, pool.n()), vec![1.0])
    } else {
        (
            pool.rows.select_rows(&idx),
            idx.iter().map(|&i| pool.noise_variances[i]).collect(),
        )
    };
    BayesLinearProblem::new(
        ForwardModel::new(rows)?,
        SpdMatrix::from_diagonal(&variances)?,
        pool.prior.clone(),
    )
}

/// EIG of the restricted problem, `½ log det(H̃(d) + I)`.
pub fn criterion(pool: &CandidatePool, d: &Design) -> Result<f64> {
    eig_logdet_form(&restrict(pool, d)?)
}

/// Index of the largest value; values within [`TIE_TOL`] of the running best
/// do not displace it, so the lowest index wins ties.
fn argmax_lowest<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        match best {
            Some((_, b)) if v <= b + TIE_TOL => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

fn check_budget(pool: &CandidatePool, k: usize) -> Result<()> {
    if k == 0 || k > pool.len() {
        return Err(OedError::InvalidArgument(format!(
            "budget must be in 1..={}, got {k}",
            pool.len()
        )));
    }
    Ok(())
}

/// Forward greedy selection of `k` candidates. Every step re-evaluates the
/// full criterion for each remaining candidate.
pub fn greedy(pool: &CandidatePool, k: usize) -> Result<DesignResult> {
    check_budget(pool, k)?;
    let mut design = Design::empty(pool.len());
    let mut current = criterion(pool, &design)?;
    let mut trace = Vec::with_capacity(k);
    for step in 0..k {
        let remaining: Vec<usize> = (0..pool.len()).filter(|&i| !design.selected[i]).collect();
        let values = remaining
            .par_iter()
            .map(|&i| criterion(pool, &design.with(i, true)))
            .collect::<Result<Vec<f64>>>()?;
        let (pos, value) = argmax_lowest(values.iter().copied().enumerate())
            .expect("budget leaves at least one candidate");
        let added = remaining[pos];
        design.selected[added] = true;
        current = value;
        trace.push(TraceStep {
            step: step + 1,
            added,
            removed: None,
            criterion: current,
        });
    }
    Ok(DesignResult {
        design,
        criterion: current,
        trace,
    })
}

/// Greedy selection using rank-one updates: the gain of candidate `j` is
/// `½ log(1 + gⱼᵀ (I + H̃(d))⁻¹ gⱼ)` and the Cholesky factor of `I + H̃(d)` is
/// updated after each pick. Selects the same design as [`greedy`] up to
/// round-off in near-ties.
pub fn greedy_rank_one(pool: &CandidatePool, k: usize) -> Result<DesignResult> {
    check_budget(pool, k)?;
    let g = pool.whitened_rows()?;
    let n = pool.n();
    let mut chol: Cholesky<f64, Dyn> =
        Cholesky::new(DMatrix::identity(n, n)).expect("identity is positive definite");
    let mut design = Design::empty(pool.len());
    let mut current = 0.0;
    let mut trace = Vec::with_capacity(k);
    for step in 0..k {
        let remaining: Vec<usize> = (0..pool.len()).filter(|&i| !design.selected[i]).collect();
        let gains: Vec<f64> = remaining
            .iter()
            .map(|&i| {
                let gi = g.column(i).into_owned();
                0.5 * gi.dot(&chol.solve(&gi)).ln_1p()
            })
            .collect();
        let (pos, gain) = argmax_lowest(gains.iter().copied().enumerate())
            .expect("budget leaves at least one candidate");
        let added = remaining[pos];
        design.selected[added] = true;
        chol.rank_one_update(&g.column(added).into_owned(), 1.0);
        current += gain;
        trace.push(TraceStep {
            step: step + 1,
            added,
            removed: None,
            criterion: current,
        });
    }
    let criterion = criterion(pool, &design)?;
    Ok(DesignResult {
        design,
        criterion,
        trace,
    })
}

/// Best-improvement 1-swap local search starting from `d`.
pub fn exchange(pool: &CandidatePool, d: &Design) -> Result<DesignResult> {
    check_dim("design", pool.len(), d.len())?;
    let mut design = d.clone();
    let mut current = criterion(pool, &design)?;
    let mut trace = Vec::new();
    loop {
        let inside = design.indices();
        let outside: Vec<usize> = (0..pool.len()).filter(|&i| !design.selected[i]).collect();
        let swaps: Vec<(usize, usize)> = inside
            .iter()
            .flat_map(|&i| outside.iter().map(move |&j| (i, j)))
            .collect();
        let values = swaps
            .par_iter()
            .map(|&(i, j)| criterion(pool, &design.with(i, false).with(j, true)))
            .collect::<Result<Vec<f64>>>()?;
        let best = argmax_lowest(values.iter().copied().enumerate());
        match best {
            Some((pos, value)) if value > current + TIE_TOL => {
                let (removed, added) = swaps[pos];
                design.selected[removed] = false;
                design.selected[added] = true;
                current = value;
                trace.push(TraceStep {
                    step: trace.len() + 1,
                    added,
                    removed: Some(removed),
                    criterion: current,
                });
            }
            _ => break,
        }
    }
    Ok(DesignResult {
        design,
        criterion: current,
        trace,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact maximizer over all size-`k` designs, ties broken lexicographically.
pub fn exhaustive(pool: &CandidatePool, k: usize) -> Result<DesignResult> {
    check_budget(pool, k)?;
    let count = binomial(pool.len(), k);
    if count > EXHAUSTIVE_LIMIT {
        return Err(OedError::BudgetExceeded {
            pool: pool.len(),
            budget: k,
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let g = pool.whitened_rows()?;
    let combos: Vec<Vec<usize>> = (0..pool.len()).combinations(k).collect();
    // ½ log det(I_k + G_dᵀ G_d) equals ½ log det(I_n + G_d G_dᵀ).
    let values: Vec<f64> = combos
        .par_iter()
        .map(|idx| {
            let gd = g.select_columns(idx);
            let gram = gd.transpose() * &gd + DMatrix::identity(k, k);
            SpdMatrix::new(gram).map(|m| 0.5 * m.log_det())
        })
        .collect::<Result<Vec<f64>>>()?;
    let (best, _) = argmax_lowest(values.iter().copied().enumerate()).expect("at least one design");
    let design = Design::from_indices(pool.len(), &combos[best])?;
    let criterion = criterion(pool, &design)?;
    Ok(DesignResult {
        design,
        criterion,
        trace: Vec::new(),
    })
}

/// EIG of each greedy prefix, i.e. the criterion-vs-budget curve.
pub fn budget_curve(result: &DesignResult) -> Vec<(usize, f64)> {
    result.trace.iter().map(|s| (s.step, s.criterion)).collect()
}

/// Single-row EIG `½ log(1 + fᵀ Γ_prior f / σ²)`.
pub fn single_row_eig(prior_cov: &SpdMatrix, row: &DVector<f64>, variance: f64) -> f64 {
    0.5 * (row.dot(&(prior_cov.matrix() * row)) / variance).ln_1p()
}
