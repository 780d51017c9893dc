//! Row-level EXP3 and EXP3.M updates.
//!
//! Both functions operate on one vertex's arm weights and probabilities,
//! indexed by position within the vertex's neighbor list.

use super::PolicyError;

/// Outcome of one row update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    /// Arms whose importance-weighted reward hit the `1/δ` clip.
    pub clipped: usize,
    /// Whether EXP3.M capping was active after the update.
    pub capped: bool,
}

/// Parameters shared by both updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowParams {
    pub eta: f64,
    pub delta: f64,
    pub k: usize,
    pub clip: bool,
}

// Weights are rescaled once the largest exceeds this; q is scale-free.
const RESCALE_ABOVE: f64 = 1e200;

fn check_rewards(n: usize, rewards: &[(usize, f64)]) -> Result<(), PolicyError> {
    for &(arm, r) in rewards {
        if arm >= n {
            return Err(PolicyError::Contract(format!("reward for arm {arm} of {n}")));
        }
        if !(r >= 0.0) || !r.is_finite() {
            return Err(PolicyError::Contract(format!(
                "reward {r} for arm {arm} is not a finite nonnegative value"
            )));
        }
    }
    Ok(())
}

/// Importance-weighted reward `r/q`, clipped to `1/δ` when requested.
fn estimate(r: f64, q: f64, p: &RowParams, stats: &mut UpdateStats) -> Result<f64, PolicyError> {
    if !(q > 0.0) {
        return Err(PolicyError::Contract("reward on an arm with zero probability".into()));
    }
    let r_hat = r / q;
    if p.clip && p.delta * r_hat > 1.0 {
        stats.clipped += 1;
        return Ok(1.0 / p.delta);
    }
    Ok(r_hat)
}

fn rescale(w: &mut [f64]) {
    let max = w.iter().copied().fold(0.0, f64::max);
    if max > RESCALE_ABOVE {
        w.iter_mut().for_each(|x| *x /= max);
    }
}

/// EXP3 step for one row.
///
/// `rewards` lists `(arm, r)` for the arms drawn this step; repeated arms
/// have their rewards summed before the importance weighting.
pub fn exp3_update(
    w: &mut [f64],
    q: &mut [f64],
    rewards: &[(usize, f64)],
    p: &RowParams,
) -> Result<UpdateStats, PolicyError> {
    let n = w.len();
    check_rewards(n, rewards)?;
    let mut summed = vec![0.0; n];
    let mut touched = vec![false; n];
    for &(arm, r) in rewards {
        summed[arm] += r;
        touched[arm] = true;
    }
    let mut stats = UpdateStats::default();
    for j in 0..n {
        if touched[j] {
            let r_hat = estimate(summed[j], q[j], p, &mut stats)?;
            w[j] *= (p.delta * r_hat / n as f64).exp();
        }
    }
    rescale(w);
    let total: f64 = w.iter().sum();
    let floor = p.eta / n as f64;
    for j in 0..n {
        q[j] = (1.0 - p.eta) * w[j] / total + floor;
    }
    Ok(stats)
}

/// EXP3.M step for one row.
///
/// `capped` holds the capped set from the previous step on entry and the
/// new one on exit. Arms in the previous capped set keep their weight.
/// `rewards` must name distinct arms.
pub fn exp3m_update(
    w: &mut [f64],
    q: &mut [f64],
    capped: &mut [bool],
    rewards: &[(usize, f64)],
    p: &RowParams,
) -> Result<UpdateStats, PolicyError> {
    let n = w.len();
    check_rewards(n, rewards)?;
    let mut seen = vec![false; n];
    for &(arm, _) in rewards {
        if std::mem::replace(&mut seen[arm], true) {
            return Err(PolicyError::Contract(format!("arm {arm} rewarded twice in one subset")));
        }
    }
    let mut stats = UpdateStats::default();
    for &(arm, r) in rewards {
        let r_hat = estimate(r, q[arm], p, &mut stats)?;
        if !capped[arm] {
            w[arm] *= (p.delta * r_hat / n as f64).exp();
        }
    }
    rescale(w);

    let threshold = capping_threshold(w, p.k, p.eta)?;
    let mut w_prime = w.to_vec();
    match threshold {
        Some(a) => {
            for j in 0..n {
                capped[j] = w[j] >= a;
                if capped[j] {
                    w_prime[j] = a;
                }
            }
            stats.capped = true;
        }
        None => capped.iter_mut().for_each(|c| *c = false),
    }
    probabilities_from_weights(&w_prime, capped, p.k, p.eta, q);
    Ok(stats)
}

/// `q = k((1-η) w'/Σw' + η/n)`, with capped arms pinned to exactly 1.
pub(crate) fn probabilities_from_weights(w_prime: &[f64], capped: &[bool], k: usize, eta: f64, q: &mut [f64]) {
    let n = w_prime.len();
    let total: f64 = w_prime.iter().sum();
    let kf = k as f64;
    for j in 0..n {
        q[j] = if capped[j] {
            1.0
        } else {
            (kf * ((1.0 - eta) * w_prime[j] / total + eta / n as f64)).min(1.0)
        };
    }
}

/// Solves for the cap `a` when the heaviest arm would otherwise get a
/// probability above one. Returns `None` when no capping is needed.
///
/// With `c = (1/k - η/n)/(1-η)` the cap satisfies `a = c (m a + R)` where
/// `m` arms sit at or above `a` and `R` is the weight of the rest, so
/// `a = c R / (1 - c m)`. Prefix lengths of the descending order are
/// scanned for the consistent `m`.
pub fn capping_threshold(w: &[f64], k: usize, eta: f64) -> Result<Option<f64>, PolicyError> {
    let n = w.len();
    if eta >= 1.0 || k == 0 || k >= n {
        return Ok(None);
    }
    let c = (1.0 / k as f64 - eta / n as f64) / (1.0 - eta);
    let total: f64 = w.iter().sum();
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max < c * total {
        return Ok(None);
    }
    let mut sorted = w.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut rest = total;
    for m in 1..n {
        rest -= sorted[m - 1];
        let denom = 1.0 - c * m as f64;
        if denom <= 0.0 {
            break;
        }
        let a = c * rest.max(0.0) / denom;
        if sorted[m - 1] >= a && a > sorted[m] {
            return Ok(Some(a));
        }
    }
    Err(PolicyError::Internal(format!(
        "no consistent capping threshold for weights {w:?} with k = {k}"
    )))
}
