//! Dependent rounding and plain categorical sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::PolicyError;

/// Tolerance on `Σq` for both samplers.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Entries within this distance of 0 or 1 are treated as integral.
const SNAP: f64 = 1e-12;

/// Draws a subset of exactly `k` indices whose inclusion probabilities
/// equal `q`.
///
/// Pairs of fractional entries are repeatedly rounded against each other
/// until at most one fractional entry is left; each pair update makes at
/// least one of the two integral, so there are at most `n - 1` updates.
/// The returned indices are sorted.
pub fn depround<R: Rng + ?Sized>(k: usize, q: &[f64], rng: &mut R) -> Result<Vec<usize>, PolicyError> {
    let n = q.len();
    if k > n {
        return Err(PolicyError::Contract(format!("k = {k} exceeds {n} arms")));
    }
    if let Some((i, v)) = q.iter().enumerate().find(|(_, &v)| !(-SNAP..=1.0 + SNAP).contains(&v)) {
        return Err(PolicyError::Contract(format!("q[{i}] = {v} outside [0, 1]")));
    }
    let sum: f64 = q.iter().sum();
    if (sum - k as f64).abs() > SUM_TOLERANCE {
        return Err(PolicyError::Contract(format!("Σq = {sum}, expected {k}")));
    }

    let mut p: Vec<f64> = q.iter().map(|&v| snap(v)).collect();
    let mut fractional: Vec<usize> = (0..n).filter(|&i| is_fractional(p[i])).collect();
    let mut updates = 0usize;
    while fractional.len() >= 2 {
        let j = fractional.pop().unwrap();
        let i = fractional.pop().unwrap();
        let (qi, qj) = (p[i], p[j]);
        let beta = (1.0 - qi).min(qj);
        let gamma = qi.min(1.0 - qj);
        if rng.random::<f64>() * (beta + gamma) < gamma {
            // q_i += β, q_j -= β; whichever bound was tight lands exactly
            if 1.0 - qi <= qj {
                p[i] = 1.0;
                p[j] = snap(qj - beta);
            } else {
                p[i] = snap(qi + beta);
                p[j] = 0.0;
            }
        } else if qi <= 1.0 - qj {
            p[i] = 0.0;
            p[j] = snap(qj + gamma);
        } else {
            p[i] = snap(qi - gamma);
            p[j] = 1.0;
        }
        updates += 1;
        assert!(updates < n.max(1), "DepRound exceeded n - 1 pair updates");
        for idx in [i, j] {
            if is_fractional(p[idx]) {
                fractional.push(idx);
            }
        }
    }
    // A lone leftover is rounding noise from Σq ≈ k.
    if let Some(i) = fractional.pop() {
        p[i] = p[i].round();
    }

    let chosen: Vec<usize> = (0..n).filter(|&i| p[i] == 1.0).collect();
    if chosen.len() != k {
        return Err(PolicyError::Internal(format!(
            "DepRound produced {} elements, expected {k}",
            chosen.len()
        )));
    }
    Ok(chosen)
}

#[inline]
fn snap(v: f64) -> f64 {
    if v.abs() <= SNAP {
        0.0
    } else if (v - 1.0).abs() <= SNAP {
        1.0
    } else {
        v
    }
}

#[inline]
fn is_fractional(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

/// `k` independent categorical draws from `q`.
pub fn sample_with_replacement<R: Rng + ?Sized>(q: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>, PolicyError> {
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(PolicyError::Contract(format!("Σq = {sum}, expected 1")));
    }
    if q.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(PolicyError::Contract("negative or non-finite probability".into()));
    }
    if q.len() == 1 {
        return Ok(vec![0; k]);
    }
    let dist = WeightedIndex::new(q).map_err(|e| PolicyError::Contract(e.to_string()))?;
    Ok((0..k).map(|_| dist.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frequencies(k: usize, q: &[f64], draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; q.len()];
        for _ in 0..draws {
            let s = depround(k, q, &mut rng).unwrap();
            assert_eq!(s.len(), k);
            for i in s {
                counts[i] += 1;
            }
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn integral_input_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(depround(2, &[1.0, 1.0, 0.0], &mut rng).unwrap(), vec![0, 1]);
        }
    }

    #[test]
    fn two_arm_frequency() {
        let f = frequencies(1, &[0.3, 0.7], 100_000, 1);
        assert!((f[0] - 0.3).abs() < 0.01, "{f:?}");
    }

    #[test]
    fn uniform_half() {
        let f = frequencies(2, &[0.5; 4], 100_000, 2);
        for v in f {
            assert!((v - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn rejects_bad_sum_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            depround(2, &[0.5, 0.5, 0.5], &mut rng),
            Err(PolicyError::Contract(_))
        ));
        assert!(matches!(
            depround(1, &[1.5, -0.5], &mut rng),
            Err(PolicyError::Contract(_))
        ));
    }

    #[test]
    fn tolerates_sum_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = [0.1 + 1e-11, 0.2, 0.3, 0.4, 1.0];
        for _ in 0..1000 {
            assert_eq!(depround(2, &q, &mut rng).unwrap().len(), 2);
        }
    }

    #[test]
    fn with_replacement_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_with_replacement(&[1.0], 5, &mut rng).unwrap(), vec![0; 5]);
        let n = 100_000;
        let hits = sample_with_replacement(&[0.5, 0.5], n, &mut rng)
            .unwrap()
            .iter()
            .filter(|&&i| i == 0)
            .count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
        assert!(matches!(
            sample_with_replacement(&[0.5, 0.6], 1, &mut rng),
            Err(PolicyError::Contract(_))
        ));

        let a = sample_with_replacement(&[0.2, 0.3, 0.5], 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_with_replacement(&[0.2, 0.3, 0.5], 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
