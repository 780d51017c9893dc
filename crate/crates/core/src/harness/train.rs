//! Minibatch training with bandit-driven neighbor sampling.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::estimators::{effective_variance_parts, reward_multi, reward_single};
use crate::gnn::{
    draw_block, forward, full_batch_forward, loss_and_backward, metrics, row_attention, Adam, Architecture,
    ForwardTrace, GnnError, Metrics, ModelParams, SampleBlock,
};
use crate::graph::{Graph, Split, WeightMode};
use crate::matrix::norm_sq;
use crate::policy::{init_policy, BanditConfig, LearningRate, PlayMode, PolicyState};

/// How neighbor probabilities evolve during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// EXP3 / EXP3.M updates after every step.
    Bandit,
    /// Initial uniform probabilities, never updated.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub k: usize,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub eta: f64,
    /// Horizon for the learning-rate schedule; `None` uses
    /// `epochs × steps per epoch`.
    pub horizon: Option<u64>,
    pub mode: PlayMode,
    pub arch: Architecture,
    pub sampler: SamplerKind,
    pub reward_clip: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            k: 1,
            hidden: 16,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            eta: 0.4,
            horizon: None,
            mode: PlayMode::Single,
            arch: Architecture::Gcn,
            sampler: SamplerKind::Bandit,
            reward_clip: true,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.k == 0 {
            return bad("sample size must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay nonnegative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Per-epoch log line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    /// Mean minibatch accuracy over the epoch.
    pub train_acc: f64,
    pub val_metric: f64,
    /// Mean effective variance of the sampled first-layer rows.
    #[serde(rename = "mean_Ve")]
    pub mean_ve: f64,
    /// Cumulative clipped rewards.
    pub clip_events: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub logs: Vec<EpochLog>,
    /// Parameters with the best validation metric, or the last ones when
    /// there is no validation split.
    pub params: ModelParams,
    pub policy: PolicyState,
    pub best_epoch: usize,
    pub best_val: f64,
    pub test: Metrics,
    pub skipped_steps: usize,
    pub horizon: u64,
}

impl TrainReport {
    pub fn write_log<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.logs {
            w.serialize(row)?;
        }
        w.flush()
    }

    /// Writes `train_log.csv`, `model.json` and `policy.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        let log = std::fs::File::create(dir.join("train_log.csv")).map_err(|e| HarnessError::io(dir, e))?;
        self.write_log(log).map_err(|e| HarnessError::io(dir, e))?;
        self.params.save(&dir.join("model.json"))?;
        self.policy.save(&dir.join("policy.json"))?;
        Ok(())
    }
}

/// Independent random streams derived from one seed.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const SAMPLER_STREAM: u64 = 3;
const DROPOUT_STREAM: u64 = 4;

/// Rewards for every sampled first-layer row, keyed by row position and
/// listed once per draw.
pub fn block_rewards(
    graph: &Graph,
    block: &SampleBlock,
    trace: &ForwardTrace,
) -> Vec<(usize, Vec<usize>, Vec<(usize, f64)>)> {
    let sample = &block.layers[0];
    let layer = &trace.layers[0];
    let mut out = Vec::new();
    for (r, row) in sample.rows.iter().enumerate() {
        if row.exhaustive {
            continue;
        }
        let mut rewards = Vec::with_capacity(row.draw.len());
        for (idx, e) in row.entries.iter().enumerate() {
            let alpha = layer.alpha(r, idx, sample);
            let h2 = norm_sq(graph.features().row(e.node));
            match block.mode {
                PlayMode::Single => {
                    let rew = reward_single(alpha, e.q, h2, block.k).expect("sampled arms have q > 0");
                    rewards.extend(std::iter::repeat((e.pos, rew)).take(e.count));
                }
                PlayMode::Multiple => {
                    rewards.push((e.pos, reward_multi(alpha, e.q, h2).expect("sampled arms have q > 0")));
                }
            }
        }
        out.push((row.node, row.draw.clone(), rewards));
    }
    out
}

/// First-layer aggregation weights of the full row of `v`.
pub fn layer0_alphas(graph: &Graph, params: &ModelParams, v: usize) -> Vec<f64> {
    match &params.layers[0].attention {
        Some(a) => row_attention(graph, a, graph.features(), v),
        None => graph.row_weights(v).to_vec(),
    }
}

/// Effective variance of row `v` under probabilities `q`.
pub(crate) fn row_ve(graph: &Graph, params: &ModelParams, v: usize, q: &[f64], k: usize, mode: PlayMode) -> f64 {
    let alphas = layer0_alphas(graph, params, v);
    let norms: Vec<f64> = graph
        .neighbors(v)
        .iter()
        .map(|&u| norm_sq(graph.features().row(u)))
        .collect();
    effective_variance_parts(&alphas, &norms, q, k, mode).unwrap_or(f64::INFINITY)
}

struct StepOutcome {
    loss: f64,
    acc: f64,
    mean_ve: f64,
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    graph: &Graph,
    config: &TrainConfig,
    params: &mut ModelParams,
    adam: &mut Adam,
    policy: &mut PolicyState,
    batch: &[usize],
    sampler_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, HarnessError> {
    let block = draw_block(graph, policy, batch, sampler_rng)?;
    debug_assert!(block.is_closed());
    let trace = forward(graph, params, &block, config.dropout, dropout_rng)?;
    let (loss, grads) = loss_and_backward(params, &block, &trace, graph.labels())?;
    adam.step(params, &grads)?;
    let acc = metrics(&trace.logits, &trace.batch, graph.labels()).accuracy;

    let rows = &block.layers[0].rows;
    let sampled: Vec<&_> = rows.iter().filter(|r| !r.exhaustive).collect();
    let mean_ve = if sampled.is_empty() {
        0.0
    } else {
        sampled
            .iter()
            .map(|r| row_ve(graph, params, r.node, policy.q(r.node), config.k, config.mode))
            .sum::<f64>()
            / sampled.len() as f64
    };

    if config.sampler == SamplerKind::Bandit {
        #[cfg(debug_assertions)]
        let steps_before: u64 = (0..policy.num_rows()).map(|v| policy.step(v)).sum();
        let updates = block_rewards(graph, &block, &trace);
        for (v, draw, rewards) in &updates {
            policy.update(*v, draw, rewards)?;
        }
        #[cfg(debug_assertions)]
        {
            let steps_after: u64 = (0..policy.num_rows()).map(|v| policy.step(v)).sum();
            debug_assert_eq!(steps_after - steps_before, updates.len() as u64);
        }
    }
    Ok(StepOutcome { loss, acc, mean_ve })
}

/// Trains on the graph's training split, selecting the epoch with the best
/// validation metric and reporting test metrics for it.
pub fn train(graph: &Graph, config: &TrainConfig) -> Result<TrainReport, HarnessError> {
    config.validate()?;
    if config.arch == Architecture::Gcn && graph.weight_mode() == WeightMode::Attentive {
        return Err(HarnessError::Config(
            "GCN training needs a graph with fixed weights".into(),
        ));
    }
    let train_nodes = graph.nodes_in(Split::Train);
    let val_nodes = graph.nodes_in(Split::Val);
    let test_nodes = graph.nodes_in(Split::Test);
    if train_nodes.is_empty() {
        return Err(HarnessError::Config("the training split is empty".into()));
    }
    let steps_per_epoch = train_nodes.len().div_ceil(config.batch_size);
    let horizon = config.horizon.unwrap_or((config.epochs * steps_per_epoch) as u64);

    let bandit = BanditConfig {
        eta: config.eta,
        k: config.k,
        learning_rate: LearningRate::Scheduled { horizon },
        mode: config.mode,
        reward_clip: config.reward_clip,
    };
    let mut policy = init_policy(graph, bandit)?;
    let mut params = ModelParams::init(
        config.arch,
        graph.feature_dim(),
        config.hidden,
        graph.labels().num_outputs(),
        &mut stream(config.seed, INIT_STREAM),
    );
    let mut adam = Adam::new(&params, config.lr, config.weight_decay);
    let mut shuffle_rng = stream(config.seed, SHUFFLE_STREAM);
    let mut sampler_rng = stream(config.seed, SAMPLER_STREAM);
    let mut dropout_rng = stream(config.seed, DROPOUT_STREAM);

    let mut order = train_nodes.clone();
    let mut logs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut skipped = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss, mut acc, mut ve, mut done) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            match train_step(
                graph,
                config,
                &mut params,
                &mut adam,
                &mut policy,
                batch,
                &mut sampler_rng,
                &mut dropout_rng,
            ) {
                Ok(o) => {
                    loss += o.loss;
                    acc += o.acc;
                    ve += o.mean_ve;
                    done += 1;
                }
                Err(HarnessError::Model(GnnError::Numeric(what))) => {
                    log::warn!("epoch {epoch}: step skipped, non-finite {what}");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if done == 0 {
            return Err(HarnessError::Numeric(format!("every step of epoch {epoch} failed")));
        }
        let out = full_batch_forward(graph, &params)?;
        let val_rows = super::select_rows(&out.logits, &val_nodes);
        let val = if val_nodes.is_empty() {
            0.0
        } else {
            metrics(&val_rows, &val_nodes, graph.labels()).micro_f1
        };
        // without a validation split the last epoch is kept
        if val_nodes.is_empty() || best.as_ref().map_or(true, |(b, _, _)| val > *b) {
            best = Some((val, epoch, params.clone()));
        }
        let n = done as f64;
        logs.push(EpochLog {
            epoch,
            step: adam.steps_taken(),
            loss: loss / n,
            train_acc: acc / n,
            val_metric: val,
            mean_ve: ve / n,
            clip_events: policy.clip_events(),
        });
        log::debug!("epoch {epoch}: loss {:.4} val {:.4}", loss / n, val);
    }

    let (best_val, best_epoch, params) = best.expect("at least one epoch ran");
    let out = full_batch_forward(graph, &params)?;
    let test = metrics(
        &super::select_rows(&out.logits, &test_nodes),
        &test_nodes,
        graph.labels(),
    );
    Ok(TrainReport {
        logs,
        params,
        policy,
        best_epoch,
        best_val,
        test,
        skipped_steps: skipped,
        horizon,
    })
}
