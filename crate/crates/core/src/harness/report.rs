//! Per-vertex effective variance of the first layer under three samplers.

use std::io::Write;

use serde::Serialize;

use super::train::layer0_alphas;
use super::HarnessError;
use crate::estimators::{effective_variance_parts, optimal_from_parts, optimal_multi_from_parts, OptimalForm};
use crate::gnn::ModelParams;
use crate::graph::{Graph, Split};
use crate::matrix::norm_sq;
use crate::policy::{PlayMode, PolicyState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReportRow {
    pub vertex: String,
    pub degree: usize,
    #[serde(rename = "V_c")]
    pub constant_term: f64,
    pub uniform: f64,
    pub bandit: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub rows: Vec<VarianceReportRow>,
    /// Means over rows that are actually sampled (degree above `k`).
    pub mean: VarianceReportRow,
    pub sampled_rows: usize,
}

impl VarianceReport {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.serialize(row)?;
        }
        w.flush()
    }
}

/// Effective variance of every training vertex's first-layer aggregation
/// with uniform, learned and optimal sampling probabilities.
///
/// Rows with at most `k` neighbors are aggregated exactly, so all three
/// columns equal `V_c` there.
pub fn variance_report(
    graph: &Graph,
    params: &ModelParams,
    policy: &PolicyState,
    k: usize,
    mode: PlayMode,
) -> Result<VarianceReport, HarnessError> {
    if policy.num_rows() != graph.num_nodes() {
        return Err(HarnessError::Config("policy does not match the graph".into()));
    }
    let feats = graph.features();
    let mut rows = Vec::new();
    let mut sums = [0.0; 4];
    let mut sampled = 0usize;
    for v in graph.nodes_in(Split::Train) {
        let nbrs = graph.neighbors(v);
        let n = nbrs.len();
        if n == 0 {
            continue;
        }
        let alphas = layer0_alphas(graph, params, v);
        let norms: Vec<f64> = nbrs.iter().map(|&u| norm_sq(feats.row(u))).collect();
        let mut mu = vec![0.0; graph.feature_dim()];
        for (a, &u) in alphas.iter().zip(nbrs) {
            crate::matrix::axpy(*a, feats.row(u), &mut mu);
        }
        let vc = norm_sq(&mu) / k as f64;
        let row = if n <= k || policy.is_exhaustive(v) {
            VarianceReportRow {
                vertex: v.to_string(),
                degree: n,
                constant_term: vc,
                uniform: vc,
                bandit: vc,
                oracle: vc,
            }
        } else {
            let (uniform, oracle) = match mode {
                PlayMode::Single => (
                    vec![1.0 / n as f64; n],
                    optimal_from_parts(&alphas, &norms, OptimalForm::Minimizing).q,
                ),
                PlayMode::Multiple => (
                    vec![k as f64 / n as f64; n],
                    optimal_multi_from_parts(&alphas, &norms, k).q,
                ),
            };
            let ve = |q: &[f64]| effective_variance_parts(&alphas, &norms, q, k, mode);
            let r = VarianceReportRow {
                vertex: v.to_string(),
                degree: n,
                constant_term: vc,
                uniform: ve(&uniform)?,
                bandit: ve(policy.q(v))?,
                oracle: ve(&oracle)?,
            };
            sampled += 1;
            for (s, x) in sums.iter_mut().zip([r.constant_term, r.uniform, r.bandit, r.oracle]) {
                *s += x;
            }
            r
        };
        rows.push(row);
    }
    let d = sampled.max(1) as f64;
    let mean = VarianceReportRow {
        vertex: "mean".into(),
        degree: 0,
        constant_term: sums[0] / d,
        uniform: sums[1] / d,
        bandit: sums[2] / d,
        oracle: sums[3] / d,
    };
    Ok(VarianceReport {
        rows,
        mean,
        sampled_rows: sampled,
    })
}
