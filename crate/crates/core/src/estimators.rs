//! Importance-sampled neighbor aggregation and the variance quantities the
//! samplers optimise.
//!
//! A [`NeighborView`] is one vertex's neighborhood at one layer: the
//! aggregation weights `α_j`, neighbor embeddings `h_j` and sampling
//! probabilities `q_j`. The exact aggregate is `μ = Σ α_j h_j`.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::matrix::{axpy, norm_sq, DenseMatrix};
use crate::policy::PlayMode;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("arm {arm} has q = 0 but a nonzero contribution; the variance diverges")]
    DivergentVariance { arm: usize },
}

type Result<T> = std::result::Result<T, EstimatorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborView {
    alphas: Vec<f64>,
    embeddings: DenseMatrix,
    q: Vec<f64>,
}

impl NeighborView {
    pub fn new(alphas: Vec<f64>, embeddings: DenseMatrix, q: Vec<f64>) -> Result<Self> {
        let n = alphas.len();
        if embeddings.rows() != n || q.len() != n {
            return Err(EstimatorError::Contract(format!(
                "{n} alphas, {} embeddings, {} probabilities",
                embeddings.rows(),
                q.len()
            )));
        }
        if alphas.iter().chain(&q).any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(EstimatorError::Contract(
                "alphas and q must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { alphas, embeddings, q })
    }

    pub fn from_rows(alphas: Vec<f64>, embeddings: &[Vec<f64>], q: Vec<f64>) -> Result<Self> {
        let m =
            DenseMatrix::from_rows(embeddings).ok_or_else(|| EstimatorError::Contract("ragged embeddings".into()))?;
        Self::new(alphas, m, q)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    #[inline]
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    #[inline]
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    #[inline]
    pub fn embeddings(&self) -> &DenseMatrix {
        &self.embeddings
    }

    #[inline]
    pub fn embedding(&self, j: usize) -> &[f64] {
        self.embeddings.row(j)
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Same neighborhood under different probabilities.
    pub fn with_q(&self, q: Vec<f64>) -> Result<Self> {
        Self::new(self.alphas.clone(), self.embeddings.clone(), q)
    }

    /// `‖h_j‖²` for every neighbor.
    pub fn norms_sq(&self) -> Vec<f64> {
        (0..self.len()).map(|j| norm_sq(self.embedding(j))).collect()
    }

    /// The exact aggregate `Σ α_j h_j`.
    pub fn exact_mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim()];
        for j in 0..self.len() {
            axpy(self.alphas[j], self.embedding(j), &mut mu);
        }
        mu
    }

    fn weighted_sum(&self, arms: &[usize]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim()];
        for &j in arms {
            if j >= self.len() {
                return Err(EstimatorError::Contract(format!("arm {j} out of range")));
            }
            if !(self.q[j] > 0.0) {
                return Err(EstimatorError::Contract(format!("arm {j} drawn with q = 0")));
            }
            axpy(self.alphas[j] / self.q[j], self.embedding(j), &mut acc);
        }
        Ok(acc)
    }
}

/// `(1/k) Σ_s (α_{j_s}/q_{j_s}) h_{j_s}` over `k` draws with replacement.
pub fn mc_estimate_single(view: &NeighborView, draws: &[usize], k: usize) -> Result<Vec<f64>> {
    if draws.len() != k || k == 0 {
        return Err(EstimatorError::Contract(format!("{} draws for k = {k}", draws.len())));
    }
    let mut acc = view.weighted_sum(draws)?;
    acc.iter_mut().for_each(|x| *x /= k as f64);
    Ok(acc)
}

/// `Σ_{j∈S} (α_j/q_j) h_j` over a DepRound subset of size `k`.
pub fn mc_estimate_multi(view: &NeighborView, subset: &[usize], k: usize) -> Result<Vec<f64>> {
    if subset.len() != k {
        return Err(EstimatorError::Contract(format!(
            "subset of {} for k = {k}",
            subset.len()
        )));
    }
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(EstimatorError::Contract("subset repeats an arm".into()));
    }
    view.weighted_sum(subset)
}

/// Effective variance from per-arm `α_j`, `‖h_j‖²` and `q_j`.
///
/// Single play: `(1/k) Σ α²‖h‖²/q`. Multiple play: `Σ α‖h‖²/q`.
pub fn effective_variance_parts(alphas: &[f64], norms_sq: &[f64], q: &[f64], k: usize, mode: PlayMode) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..alphas.len() {
        let num = match mode {
            PlayMode::Single => alphas[j] * alphas[j] * norms_sq[j],
            PlayMode::Multiple => alphas[j] * norms_sq[j],
        };
        if num == 0.0 {
            continue;
        }
        if !(q[j] > 0.0) {
            return Err(EstimatorError::DivergentVariance { arm: j });
        }
        total += num / q[j];
    }
    Ok(match mode {
        PlayMode::Single => total / k as f64,
        PlayMode::Multiple => total,
    })
}

pub fn effective_variance(view: &NeighborView, k: usize, mode: PlayMode) -> Result<f64> {
    effective_variance_parts(view.alphas(), &view.norms_sq(), view.q(), k, mode)
}

/// Variance decomposition of the single-play estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRecord {
    pub effective_variance: f64,
    pub constant_term: f64,
    pub true_variance: f64,
    pub step: u64,
}

/// Exact variance of the single-play estimator by summing over arms.
///
/// `V = (1/k) Σ_j q_j ‖(α_j/q_j) h_j − μ‖²`, alongside `V_e` and
/// `V_c = ‖μ‖²/k`.
pub fn true_variance_single(view: &NeighborView, k: usize) -> Result<VarianceRecord> {
    let mu = view.exact_mean();
    let mut v = 0.0;
    let mut diff = vec![0.0; view.dim()];
    for j in 0..view.len() {
        let q = view.q()[j];
        if q == 0.0 {
            if view.alphas()[j] * norm_sq(view.embedding(j)) > 0.0 {
                return Err(EstimatorError::DivergentVariance { arm: j });
            }
            continue;
        }
        let scale = view.alphas()[j] / q;
        for ((d, h), m) in diff.iter_mut().zip(view.embedding(j)).zip(&mu) {
            *d = scale * h - m;
        }
        v += q * norm_sq(&diff);
    }
    let kf = k as f64;
    Ok(VarianceRecord {
        effective_variance: effective_variance(view, k, PlayMode::Single)?,
        constant_term: norm_sq(&mu) / kf,
        true_variance: v / kf,
        step: 0,
    })
}

/// Which closed form to use for the optimal single-play distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimalForm {
    /// `q_j ∝ α_j ‖h_j‖`, the minimizer of the effective variance.
    #[default]
    Minimizing,
    /// `q_j ∝ α_j ‖h_j‖²`.
    SquaredNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalDistribution {
    pub q: Vec<f64>,
    /// Set when every product was zero and the uniform fallback was used.
    pub degenerate: bool,
}

/// Optimal single-play probabilities from `α_j` and `‖h_j‖²`.
pub fn optimal_from_parts(alphas: &[f64], norms_sq: &[f64], form: OptimalForm) -> OptimalDistribution {
    let scores: Vec<f64> = alphas
        .iter()
        .zip(norms_sq)
        .map(|(&a, &s)| match form {
            OptimalForm::Minimizing => a * s.sqrt(),
            OptimalForm::SquaredNorm => a * s,
        })
        .collect();
    normalize_or_uniform(scores, 1.0)
}

pub fn optimal_distribution(view: &NeighborView, form: OptimalForm) -> OptimalDistribution {
    optimal_from_parts(view.alphas(), &view.norms_sq(), form)
}

fn normalize_or_uniform(scores: Vec<f64>, mass: f64) -> OptimalDistribution {
    let total: f64 = scores.iter().sum();
    let n = scores.len() as f64;
    if total > 0.0 && total.is_finite() {
        OptimalDistribution {
            q: scores.iter().map(|s| mass * s / total).collect(),
            degenerate: false,
        }
    } else {
        OptimalDistribution {
            q: vec![mass / n; scores.len()],
            degenerate: true,
        }
    }
}

/// Minimizer of `Σ α_j‖h_j‖²/q_j` subject to `Σq = k` and `0 ≤ q_j ≤ 1`.
///
/// Without the box constraint the solution is `q_j ∝ sqrt(α_j)‖h_j‖`. Arms
/// whose share would exceed one are pinned at one and the remaining mass is
/// redistributed over the rest, repeating until nothing exceeds one. Arms
/// with a zero score absorb mass only when fewer than `k` arms have a
/// positive score.
pub fn optimal_multi_from_parts(alphas: &[f64], norms_sq: &[f64], k: usize) -> OptimalDistribution {
    let n = alphas.len();
    let scores: Vec<f64> = alphas.iter().zip(norms_sq).map(|(&a, &s)| (a * s).sqrt()).collect();
    let positive = scores.iter().filter(|&&s| s > 0.0).count();
    if positive == 0 {
        return normalize_or_uniform(scores, k as f64);
    }
    let mut q = vec![0.0; n];
    if positive <= k {
        let spare = (k - positive) as f64 / (n - positive).max(1) as f64;
        for j in 0..n {
            q[j] = if scores[j] > 0.0 { 1.0 } else { spare };
        }
        return OptimalDistribution { q, degenerate: false };
    }
    let mut pinned = vec![false; n];
    loop {
        let free_mass = k as f64 - pinned.iter().filter(|&&p| p).count() as f64;
        let free_score: f64 = (0..n).filter(|&j| !pinned[j]).map(|j| scores[j]).sum();
        let mut changed = false;
        for j in 0..n {
            if !pinned[j] {
                q[j] = free_mass * scores[j] / free_score;
                if q[j] > 1.0 {
                    pinned[j] = true;
                    changed = true;
                }
            } else {
                q[j] = 1.0;
            }
        }
        if !changed {
            return OptimalDistribution { q, degenerate: false };
        }
    }
}

pub fn optimal_distribution_multi(view: &NeighborView, k: usize) -> OptimalDistribution {
    optimal_multi_from_parts(view.alphas(), &view.norms_sq(), k)
}

fn positive_q(q: f64) -> Result<()> {
    if q > 0.0 && q.is_finite() {
        Ok(())
    } else {
        Err(EstimatorError::Contract(format!("q = {q} must be positive")))
    }
}

/// `α² ‖h‖² / (k q²)`, the negative derivative of the single-play
/// effective variance with respect to `q`.
pub fn reward_single(alpha: f64, q: f64, h_norm_sq: f64, k: usize) -> Result<f64> {
    positive_q(q)?;
    Ok(alpha * alpha * h_norm_sq / (k as f64 * q * q))
}

/// `α ‖h‖² / q²`, the per-arm reward for multiple play.
pub fn reward_multi(alpha: f64, q: f64, h_norm_sq: f64) -> Result<f64> {
    positive_q(q)?;
    Ok(alpha * h_norm_sq / (q * q))
}

/// Reward of a whole subset: the sum of its per-arm rewards.
pub fn subset_reward(view: &NeighborView, subset: &[usize]) -> Result<f64> {
    subset
        .iter()
        .map(|&j| reward_multi(view.alphas()[j], view.q()[j], norm_sq(view.embedding(j))))
        .sum()
}

/// Subset-local attention rescaled to the subset's sampling mass:
/// `α'_j = (Σ_{i∈S} q_i) · α̃_j / Σ_{i∈S} α̃_i` for `j ∈ S`.
///
/// `unnormalized[s]` is `α̃` for `subset[s]`.
pub fn adjusted_attention(q: &[f64], subset: &[usize], unnormalized: &[f64]) -> Result<Vec<f64>> {
    if subset.is_empty() || subset.len() != unnormalized.len() {
        return Err(EstimatorError::Contract(
            "subset and attention values must be nonempty and aligned".into(),
        ));
    }
    if subset.iter().any(|&j| j >= q.len()) {
        return Err(EstimatorError::Contract("subset index out of range".into()));
    }
    let z: f64 = unnormalized.iter().sum();
    if !(z > 0.0) || unnormalized.iter().any(|&a| !(a >= 0.0)) {
        return Err(EstimatorError::Contract(
            "attention values must be nonnegative with a positive sum".into(),
        ));
    }
    let mass: f64 = subset.iter().map(|&j| q[j]).sum();
    Ok(unnormalized.iter().map(|a| mass * a / z).collect())
}

/// One CSV row of a variance report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub step: u64,
    pub vertex: usize,
    #[serde(rename = "V_e")]
    pub effective_variance: f64,
    #[serde(rename = "V_c")]
    pub constant_term: f64,
    #[serde(rename = "V")]
    pub true_variance: f64,
    pub sampler: String,
}

impl VarianceRow {
    pub fn new(vertex: usize, record: &VarianceRecord, sampler: &str) -> Self {
        Self {
            step: record.step,
            vertex,
            effective_variance: record.effective_variance,
            constant_term: record.constant_term,
            true_variance: record.true_variance,
            sampler: sampler.to_string(),
        }
    }
}

pub fn write_variance_csv<W: Write>(out: W, rows: &[VarianceRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}
