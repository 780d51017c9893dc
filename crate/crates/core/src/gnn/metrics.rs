//! Losses and classification metrics.

use serde::Serialize;

use super::GnnError;
use crate::graph::{Labels, Task};
use crate::matrix::DenseMatrix;

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let top = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = top + row.iter().map(|&x| (x - top).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x - lse).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_label(c: usize, classes: usize) -> Result<(), GnnError> {
    if c < classes {
        Ok(())
    } else {
        Err(GnnError::Data(format!("label {c} out of range for {classes} outputs")))
    }
}

/// Mean loss of `logits` (row `r` belongs to node `nodes[r]`) and its
/// gradient with respect to the logits.
pub(crate) fn loss_with_grad(
    logits: &DenseMatrix,
    nodes: &[usize],
    labels: &Labels,
) -> Result<(f64, DenseMatrix), GnnError> {
    let (b, c) = logits.shape();
    if nodes.len() != b || labels.num_outputs() != c {
        return Err(GnnError::Shape(format!(
            "logits {b}×{c} against {} nodes and {} outputs",
            nodes.len(),
            labels.num_outputs()
        )));
    }
    let mut grad = DenseMatrix::zeros(b, c);
    let mut loss = 0.0;
    match labels {
        Labels::MultiClass { classes, .. } => {
            for (r, &v) in nodes.iter().enumerate() {
                let y = classes[v];
                check_label(y, c)?;
                let lp = log_softmax(logits.row(r));
                loss -= lp[y];
                let g = grad.row_mut(r);
                for (j, l) in lp.iter().enumerate() {
                    g[j] = (l.exp() - f64::from(j == y)) / b as f64;
                }
            }
            loss /= b as f64;
        }
        Labels::MultiLabel(y) => {
            let total = (b * c) as f64;
            for (r, &v) in nodes.iter().enumerate() {
                for j in 0..c {
                    let x = logits.get(r, j);
                    let t = y.get(v, j);
                    loss += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
                    grad.set(r, j, (sigmoid(x) - t) / total);
                }
            }
            loss /= total;
        }
    }
    Ok((loss, grad))
}

/// Mean loss only.
pub fn loss_only(logits: &DenseMatrix, nodes: &[usize], labels: &Labels) -> Result<f64, GnnError> {
    loss_with_grad(logits, nodes, labels).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Multi-class: argmax accuracy. Multi-label: per-entry accuracy.
    pub accuracy: f64,
    pub micro_f1: f64,
}

/// Metrics of `logits` rows for `nodes`. Multi-label predictions are
/// positive when the logit is above zero, i.e. probability above 0.5.
pub fn metrics(logits: &DenseMatrix, nodes: &[usize], labels: &Labels) -> Metrics {
    if nodes.is_empty() {
        return Metrics {
            accuracy: 0.0,
            micro_f1: 0.0,
        };
    }
    match labels.task() {
        Task::MultiClass => {
            let Labels::MultiClass { classes, .. } = labels else {
                unreachable!()
            };
            let correct = nodes
                .iter()
                .enumerate()
                .filter(|&(r, &v)| argmax(logits.row(r)) == classes[v])
                .count();
            let acc = correct as f64 / nodes.len() as f64;
            Metrics {
                accuracy: acc,
                micro_f1: acc,
            }
        }
        Task::MultiLabel => {
            let Labels::MultiLabel(y) = labels else { unreachable!() };
            let (mut tp, mut fp, mut fneg, mut right) = (0usize, 0usize, 0usize, 0usize);
            for (r, &v) in nodes.iter().enumerate() {
                for j in 0..y.cols() {
                    let pred = logits.get(r, j) > 0.0;
                    let truth = y.get(v, j) > 0.5;
                    match (pred, truth) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fneg += 1,
                        _ => {}
                    }
                    right += usize::from(pred == truth);
                }
            }
            let denom = 2 * tp + fp + fneg;
            Metrics {
                accuracy: right as f64 / (nodes.len() * y.cols()) as f64,
                micro_f1: if denom == 0 {
                    1.0
                } else {
                    2.0 * tp as f64 / denom as f64
                },
            }
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}
