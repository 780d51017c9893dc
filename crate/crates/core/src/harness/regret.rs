//! Single-row bandit runs against synthetic reward streams.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use super::train::stream;
use super::HarnessError;
use crate::estimators::{
    effective_variance_parts, optimal_from_parts, optimal_multi_from_parts, reward_multi, reward_single, OptimalForm,
};
use crate::policy::{delta_schedule, BanditConfig, LearningRate, PlayMode, PolicyState};

/// Per-step neighborhood generator. Every preset keeps `Σα = 1` and
/// `‖h‖ ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamKind {
    /// All arms identical.
    Uniform,
    /// Fixed, decreasing `α_j` and `‖h_j‖` over arm index.
    Skewed,
    /// Smoothly rotating preferences, four periods over the horizon.
    Drifting,
    /// Skewed, with arm order reversed from step `at · T` on.
    Switch { at: f64 },
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Skewed => f.write_str("skewed"),
            Self::Drifting => f.write_str("drifting"),
            Self::Switch { .. } => f.write_str("switch"),
        }
    }
}

impl FromStr for StreamKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" | "stationary" => Ok(Self::Uniform),
            "skewed" => Ok(Self::Skewed),
            "drifting" => Ok(Self::Drifting),
            "switch" => Ok(Self::Switch { at: 0.5 }),
            other => Err(format!("unknown stream `{other}`")),
        }
    }
}

fn skewed(n: usize, reversed: bool) -> (Vec<f64>, Vec<f64>) {
    let span = (n - 1).max(1) as f64;
    let idx = |j: usize| if reversed { n - 1 - j } else { j } as f64;
    let raw: Vec<f64> = (0..n).map(|j| 1.0 + 2.0 * (span - idx(j)) / span).collect();
    let total: f64 = raw.iter().sum();
    let alphas = raw.iter().map(|a| a / total).collect();
    let norms = (0..n).map(|j| 1.0 - 0.4 * idx(j) / span).collect();
    (alphas, norms)
}

impl StreamKind {
    /// `(α, ‖h‖)` at step `t` (1-based) of a horizon-`horizon` run.
    pub fn values(&self, n: usize, t: u64, horizon: u64) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Self::Uniform => (vec![1.0 / n as f64; n], vec![1.0; n]),
            Self::Skewed => skewed(n, false),
            Self::Switch { at } => skewed(n, t as f64 > at * horizon as f64),
            Self::Drifting => {
                let phase = 2.0 * std::f64::consts::PI * 4.0 * t as f64 / horizon as f64;
                let arm = |j: usize| 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                let raw: Vec<f64> = (0..n).map(|j| 1.0 + 0.8 * (phase + arm(j)).sin()).collect();
                let total: f64 = raw.iter().sum();
                let norms = (0..n).map(|j| 0.6 + 0.4 * (phase + arm(j)).cos()).collect();
                (raw.iter().map(|a| a / total).collect(), norms)
            }
        }
    }
}

/// One row of a regret trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretRow {
    pub t: u64,
    #[serde(rename = "Ve_t")]
    pub ve: f64,
    #[serde(rename = "Ve_star")]
    pub ve_star: f64,
    #[serde(rename = "cum_Ve")]
    pub cum_ve: f64,
    #[serde(rename = "cum_Ve_star")]
    pub cum_ve_star: f64,
    /// `3 · cum_Ve_star + 10 sqrt(T n⁴ ln(n/k) / k³)` with `T` the horizon.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub n: usize,
    pub k: usize,
    pub mode: PlayMode,
    pub delta: f64,
    pub rows: Vec<RegretRow>,
    /// Largest `|q_j − 1/n|` (single) or `|q_j − k/n|` (multiple) seen.
    pub max_deviation_from_uniform: f64,
    /// For switch streams: steps after the switch until `q` is closer in
    /// L1 to the new optimum than to the old one.
    pub readaptation_steps: Option<u64>,
    pub clip_events: u64,
}

impl RegretTrace {
    pub fn last(&self) -> &RegretRow {
        self.rows.last().expect("trace has at least one row")
    }

    pub fn bound_holds(&self) -> bool {
        let r = self.last();
        r.cum_ve <= r.bound
    }

    /// `cum_Ve − cum_Ve_star` after step `t`.
    pub fn regret_at(&self, t: u64) -> f64 {
        let r = &self.rows[(t - 1) as usize];
        r.cum_ve - r.cum_ve_star
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretSpec {
    pub n: usize,
    pub k: usize,
    pub horizon: u64,
    pub stream: StreamKind,
    pub mode: PlayMode,
    pub eta: f64,
    pub seed: u64,
    pub reward_clip: bool,
}

impl RegretSpec {
    pub fn new(n: usize, k: usize, horizon: u64, stream: StreamKind, mode: PlayMode, seed: u64) -> Self {
        Self {
            n,
            k,
            horizon,
            stream,
            mode,
            eta: 0.4,
            seed,
            reward_clip: true,
        }
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Runs one bandit row for `horizon` steps with the scheduled learning
/// rate, recording its effective variance against the per-step optimum.
pub fn simulate_regret(spec: &RegretSpec) -> Result<RegretTrace, HarnessError> {
    let RegretSpec {
        n,
        k,
        horizon,
        stream: kind,
        mode,
        eta,
        seed,
        reward_clip,
    } = *spec;
    let schedule = delta_schedule(eta, k, n, horizon)?;
    if (horizon as f64) < schedule.t_min {
        log::warn!(
            "horizon {horizon} is below {:.1} for n = {n}, k = {k}; the regret bound does not apply",
            schedule.t_min
        );
    }
    let config = BanditConfig {
        eta,
        k,
        learning_rate: LearningRate::Fixed(schedule.delta),
        mode,
        reward_clip,
    };
    let mut policy = PolicyState::from_row_offsets(vec![0, n], config)?;
    let mut rng = stream(seed, 0);
    let (kf, nf, tf) = (k as f64, n as f64, horizon as f64);
    let slack = 10.0 * (tf * nf.powi(4) * (nf / kf).ln() / kf.powi(3)).sqrt();
    let uniform = match mode {
        PlayMode::Single => 1.0 / nf,
        PlayMode::Multiple => kf / nf,
    };
    let optimum = |alphas: &[f64], norms_sq: &[f64]| match mode {
        PlayMode::Single => optimal_from_parts(alphas, norms_sq, OptimalForm::Minimizing).q,
        PlayMode::Multiple => optimal_multi_from_parts(alphas, norms_sq, k).q,
    };
    let switch_step = match kind {
        StreamKind::Switch { at } => Some((at * tf) as u64),
        _ => None,
    };
    let targets = switch_step.map(|s| {
        let sq = |v: Vec<f64>| v.iter().map(|x| x * x).collect::<Vec<_>>();
        let (a0, h0) = kind.values(n, s, horizon);
        let (a1, h1) = kind.values(n, s + 1, horizon);
        (optimum(&a0, &sq(h0)), optimum(&a1, &sq(h1)))
    });

    let mut rows = Vec::with_capacity(horizon as usize);
    let (mut cum, mut cum_star, mut max_dev) = (0.0, 0.0, 0.0f64);
    let mut readapt = None;
    for t in 1..=horizon {
        let (alphas, norms) = kind.values(n, t, horizon);
        let norms_sq: Vec<f64> = norms.iter().map(|h| h * h).collect();
        let q = policy.q(0).to_vec();
        let ve = effective_variance_parts(&alphas, &norms_sq, &q, k, mode)?;
        let q_star = optimum(&alphas, &norms_sq);
        let ve_star = effective_variance_parts(&alphas, &norms_sq, &q_star, k, mode)?;
        cum += ve;
        cum_star += ve_star;
        max_dev = q.iter().fold(max_dev, |m, &x| m.max((x - uniform).abs()));
        rows.push(RegretRow {
            t,
            ve,
            ve_star,
            cum_ve: cum,
            cum_ve_star: cum_star,
            bound: 3.0 * cum_star + slack,
        });
        if let (Some(s), Some((old, new)), None) = (switch_step, &targets, readapt) {
            if t > s && l1(&q, new) < l1(&q, old) {
                readapt = Some(t - s);
            }
        }

        let drawn = policy.sample(0, &mut rng)?;
        let rewards: Vec<(usize, f64)> = match mode {
            PlayMode::Single => drawn
                .iter()
                .map(|&j| Ok((j, reward_single(alphas[j], q[j], norms_sq[j], k)?)))
                .collect::<Result<_, crate::estimators::EstimatorError>>()?,
            PlayMode::Multiple => drawn
                .iter()
                .map(|&j| Ok((j, reward_multi(alphas[j], q[j], norms_sq[j])?)))
                .collect::<Result<_, crate::estimators::EstimatorError>>()?,
        };
        policy.update(0, &drawn, &rewards)?;
    }
    Ok(RegretTrace {
        n,
        k,
        mode,
        delta: schedule.delta,
        rows,
        max_deviation_from_uniform: max_dev,
        readaptation_steps: readapt,
        clip_events: policy.clip_events(),
    })
}
