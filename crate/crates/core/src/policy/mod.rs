//! Per-vertex adversarial bandit samplers.
//!
//! Every vertex owns one row of arms, one per entry of its CSR neighbor
//! list (self-loop included). Rows with no more neighbors than the sample
//! size are exhaustive: every neighbor is taken with probability one and the
//! row is never updated.

mod depround;
mod exp3;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;

pub use depround::{depround, sample_with_replacement, SUM_TOLERANCE};
pub use exp3::{capping_threshold, exp3_update, exp3m_update, RowParams, UpdateStats};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayMode {
    /// `k` draws with replacement from a distribution summing to one.
    Single,
    /// One `k`-subset per step via DepRound from a vector summing to `k`.
    Multiple,
}

impl fmt::Display for PlayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Multiple => "multiple",
        })
    }
}

impl FromStr for PlayMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" | "single_play" => Ok(Self::Single),
            "multiple" | "multiple_play" => Ok(Self::Multiple),
            other => Err(format!("unknown play mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    /// Closed-form δ per row from its own `n` and the given horizon.
    Scheduled {
        horizon: u64,
    },
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub eta: f64,
    pub k: usize,
    pub learning_rate: LearningRate,
    pub mode: PlayMode,
    pub reward_clip: bool,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            eta: 0.4,
            k: 1,
            learning_rate: LearningRate::Scheduled { horizon: 10_000 },
            mode: PlayMode::Single,
            reward_clip: true,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(PolicyError::Parameter(format!("eta = {} outside (0, 1]", self.eta)));
        }
        if self.k == 0 {
            return Err(PolicyError::Parameter("sample size must be at least 1".into()));
        }
        match self.learning_rate {
            LearningRate::Fixed(d) if !(d > 0.0 && d.is_finite()) => {
                Err(PolicyError::Parameter(format!("delta = {d} must be positive")))
            }
            LearningRate::Scheduled { horizon: 0 } => Err(PolicyError::Parameter("horizon must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// Learning rate from the regret analysis together with the smallest
/// horizon for which that analysis applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaSchedule {
    pub delta: f64,
    pub t_min: f64,
}

/// `δ = sqrt((1-η) η⁴ k⁵ ln(n/k) / (T n⁴))` and
/// `T_min = ln(n/k) n² (1-η) / (k η²)`.
///
/// A horizon below `T_min` only logs a warning.
pub fn delta_schedule(eta: f64, k: usize, n: usize, horizon: u64) -> Result<DeltaSchedule, PolicyError> {
    if n <= k {
        return Err(PolicyError::Parameter(format!("n = {n} must exceed k = {k}")));
    }
    if k == 0 || horizon == 0 || !(eta > 0.0 && eta <= 1.0) {
        return Err(PolicyError::Parameter(format!(
            "need k >= 1, T >= 1 and eta in (0, 1]; got k = {k}, T = {horizon}, eta = {eta}"
        )));
    }
    let (kf, nf, tf) = (k as f64, n as f64, horizon as f64);
    let ln = (nf / kf).ln();
    let delta = ((1.0 - eta) * eta.powi(4) * kf.powi(5) * ln / (tf * nf.powi(4))).sqrt();
    let t_min = ln * nf * nf * (1.0 - eta) / (kf * eta * eta);
    Ok(DeltaSchedule { delta, t_min })
}

/// Arms drawn for one row in one step, as positions within the row.
/// Single play may repeat positions; multiple play and exhaustive rows
/// never do.
pub type Draw = Vec<usize>;

/// Bandit state for all vertices, stored flat over the CSR edge array.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    config: BanditConfig,
    row_offsets: Vec<usize>,
    weights: Vec<f64>,
    probs: Vec<f64>,
    capped: Vec<bool>,
    steps: Vec<u64>,
    deltas: Vec<f64>,
    exhaustive: Vec<bool>,
    clip_events: u64,
}

/// Fresh state: unit weights, uniform probabilities, nothing capped, `t = 1`.
pub fn init_policy(graph: &Graph, config: BanditConfig) -> Result<PolicyState, PolicyError> {
    PolicyState::from_row_offsets(graph.row_offsets().to_vec(), config)
}

impl PolicyState {
    /// Builds state over arbitrary row lengths, e.g. a single simulated row.
    pub fn from_row_offsets(row_offsets: Vec<usize>, config: BanditConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        if row_offsets.first() != Some(&0) || row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(PolicyError::Parameter(
                "row offsets must start at 0 and not decrease".into(),
            ));
        }
        let rows = row_offsets.len() - 1;
        let total = *row_offsets.last().unwrap();
        let mut probs = vec![0.0; total];
        let mut deltas = vec![0.0; rows];
        let mut exhaustive = vec![false; rows];
        let k = config.k;
        let mut short = (0usize, 0.0f64);
        for v in 0..rows {
            let (lo, hi) = (row_offsets[v], row_offsets[v + 1]);
            let n = hi - lo;
            if n <= k {
                exhaustive[v] = true;
                probs[lo..hi].fill(1.0);
                continue;
            }
            let init = match config.mode {
                PlayMode::Single => 1.0 / n as f64,
                PlayMode::Multiple => k as f64 / n as f64,
            };
            probs[lo..hi].fill(init);
            deltas[v] = match config.learning_rate {
                LearningRate::Fixed(d) => d,
                LearningRate::Scheduled { horizon } => {
                    let s = delta_schedule(config.eta, k, n, horizon)?;
                    if (horizon as f64) < s.t_min {
                        short = (short.0 + 1, short.1.max(s.t_min));
                    }
                    s.delta
                }
            };
        }
        if short.0 > 0 {
            log::warn!(
                "horizon is below the minimum for {} rows (largest minimum {:.1}); the regret bound does not apply there",
                short.0,
                short.1
            );
        }
        Ok(Self {
            config,
            weights: vec![1.0; total],
            probs,
            capped: vec![false; total],
            steps: vec![1; rows],
            deltas,
            exhaustive,
            clip_events: 0,
            row_offsets,
        })
    }

    #[inline]
    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    #[inline]
    pub fn num_rows(&self) -> usize {
        self.steps.len()
    }

    #[inline]
    fn range(&self, v: usize) -> std::ops::Range<usize> {
        self.row_offsets[v]..self.row_offsets[v + 1]
    }

    #[inline]
    pub fn row_len(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    /// Current sampling probabilities of row `v`. Exhaustive rows are all ones.
    #[inline]
    pub fn q(&self, v: usize) -> &[f64] {
        &self.probs[self.range(v)]
    }

    #[inline]
    pub fn w(&self, v: usize) -> &[f64] {
        &self.weights[self.range(v)]
    }

    pub fn capped(&self, v: usize) -> Vec<usize> {
        self.capped[self.range(v)]
            .iter()
            .enumerate()
            .filter_map(|(j, &c)| c.then_some(j))
            .collect()
    }

    #[inline]
    pub fn step(&self, v: usize) -> u64 {
        self.steps[v]
    }

    #[inline]
    pub fn delta(&self, v: usize) -> f64 {
        self.deltas[v]
    }

    #[inline]
    pub fn is_exhaustive(&self, v: usize) -> bool {
        self.exhaustive[v]
    }

    /// Total number of clipped importance-weighted rewards so far.
    #[inline]
    pub fn clip_events(&self) -> u64 {
        self.clip_events
    }

    /// Mass that the row's probabilities sum to: `1`, `k`, or `n` when
    /// exhaustive.
    pub fn row_mass(&self, v: usize) -> f64 {
        if self.exhaustive[v] {
            self.row_len(v) as f64
        } else {
            match self.config.mode {
                PlayMode::Single => 1.0,
                PlayMode::Multiple => self.config.k as f64,
            }
        }
    }

    /// Draws neighbors for row `v`.
    pub fn sample<R: Rng + ?Sized>(&self, v: usize, rng: &mut R) -> Result<Draw, PolicyError> {
        if self.exhaustive[v] {
            return Ok((0..self.row_len(v)).collect());
        }
        match self.config.mode {
            PlayMode::Single => sample_with_replacement(self.q(v), self.config.k, rng),
            PlayMode::Multiple => depround(self.config.k, self.q(v), rng),
        }
    }

    /// Applies one bandit step to row `v`.
    ///
    /// `drawn` is what [`PolicyState::sample`] returned for this step and
    /// `rewards` maps drawn positions to rewards. Exhaustive rows are left
    /// untouched.
    pub fn update(&mut self, v: usize, drawn: &[usize], rewards: &[(usize, f64)]) -> Result<UpdateStats, PolicyError> {
        if let Some(&(arm, _)) = rewards.iter().find(|(arm, _)| !drawn.contains(arm)) {
            return Err(PolicyError::Contract(format!(
                "reward for arm {arm} which was not drawn in row {v}"
            )));
        }
        if self.exhaustive[v] {
            return Ok(UpdateStats::default());
        }
        let range = self.range(v);
        let params = RowParams {
            eta: self.config.eta,
            delta: self.deltas[v],
            k: self.config.k,
            clip: self.config.reward_clip,
        };
        let w = &mut self.weights[range.clone()];
        let q = &mut self.probs[range.clone()];
        let stats = match self.config.mode {
            PlayMode::Single => exp3_update(w, q, rewards, &params)?,
            PlayMode::Multiple => exp3m_update(w, q, &mut self.capped[range], rewards, &params)?,
        };
        self.clip_events += stats.clipped as u64;
        self.steps[v] += 1;
        Ok(stats)
    }

    /// Serializes to JSON keyed by vertex id.
    pub fn to_json(&self) -> Result<String, PolicyError> {
        let rows = (0..self.num_rows())
            .map(|v| {
                (
                    v,
                    RowCheckpoint {
                        w: self.w(v).to_vec(),
                        q: self.q(v).to_vec(),
                        capped: self.capped(v),
                        t: self.steps[v],
                        delta: self.deltas[v],
                        exhaustive: self.exhaustive[v],
                    },
                )
            })
            .collect();
        let ckpt = Checkpoint {
            config: self.config,
            clip_events: self.clip_events,
            rows,
        };
        serde_json::to_string(&ckpt).map_err(|e| PolicyError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let rows = ckpt.rows.len();
        if ckpt.rows.keys().copied().ne(0..rows) {
            return Err(PolicyError::Checkpoint("vertex ids must be 0..n without gaps".into()));
        }
        let mut state = Self {
            config: ckpt.config,
            row_offsets: vec![0],
            weights: Vec::new(),
            probs: Vec::new(),
            capped: Vec::new(),
            steps: Vec::with_capacity(rows),
            deltas: Vec::with_capacity(rows),
            exhaustive: Vec::with_capacity(rows),
            clip_events: ckpt.clip_events,
        };
        for (v, row) in ckpt.rows {
            let n = row.w.len();
            if row.q.len() != n || row.capped.iter().any(|&j| j >= n) {
                return Err(PolicyError::Checkpoint(format!("row {v} is inconsistent")));
            }
            state.weights.extend(row.w);
            state.probs.extend(row.q);
            let mut capped = vec![false; n];
            row.capped.iter().for_each(|&j| capped[j] = true);
            state.capped.extend(capped);
            state.steps.push(row.t);
            state.deltas.push(row.delta);
            state.exhaustive.push(row.exhaustive);
            state.row_offsets.push(state.weights.len());
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json()?).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: BanditConfig,
    clip_events: u64,
    rows: BTreeMap<usize, RowCheckpoint>,
}

#[derive(Serialize, Deserialize)]
struct RowCheckpoint {
    w: Vec<f64>,
    q: Vec<f64>,
    capped: Vec<usize>,
    t: u64,
    delta: f64,
    exhaustive: bool,
}
