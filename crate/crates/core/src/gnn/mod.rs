//! Two-layer graph network with hand-written gradients.
//!
//! Each layer aggregates neighbor inputs first and then applies its weight
//! matrix: `h_i' = σ((Σ_j c_ij h_j) W)`. In GCN mode `c_ij` comes from the
//! fixed graph weights; in attentive mode from single-head attention
//! `α̃_ij = exp(ReLU(a_Lᵀ P h_i + a_Rᵀ P h_j))`. The first layer uses ReLU,
//! the second returns logits.

mod block;
mod metrics;
mod model;
mod optim;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::DenseMatrix;

pub use block::{draw_block, exhaustive_block, Entry, LayerSample, SampleBlock, TargetRow};
pub use metrics::{loss_only, metrics, Metrics};
pub use model::{
    forward, full_batch_forward, loss_and_backward, row_attention, ForwardTrace, FullBatchOutput, LayerTrace,
};
pub use optim::Adam;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    Numeric(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("sampling: {0}")]
    Sampling(String),
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
pub enum Architecture {
    Gcn,
    Attentive,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gcn => "gcn",
            Self::Attentive => "attentive",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(Self::Gcn),
            "attentive" | "gat" => Ok(Self::Attentive),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

/// Attention parameters of one layer: projection `P` (`D_in × D_a`) and the
/// scoring vector `a = [a_L ‖ a_R]` stored as a `1 × 2D_a` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub proj: DenseMatrix,
    pub vec: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: DenseMatrix,
    pub attention: Option<AttentionParams>,
}

/// Parameters of the two-layer model. The same type holds gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<LayerParams>,
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = DenseMatrix::zeros(rows, cols);
    m.values_mut().iter_mut().for_each(|x| *x = rng.random_range(-r..r));
    m
}

impl ModelParams {
    /// Glorot-uniform initialisation. Attention uses width `hidden` in both
    /// layers.
    pub fn init<R: Rng + ?Sized>(
        arch: Architecture,
        input_dim: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let dims = [(input_dim, hidden), (hidden, outputs)];
        let layers = dims
            .iter()
            .map(|&(d_in, d_out)| {
                let weight = glorot(d_in, d_out, rng);
                let attention = (arch == Architecture::Attentive).then(|| AttentionParams {
                    proj: glorot(d_in, hidden, rng),
                    vec: glorot(1, 2 * hidden, rng),
                });
                LayerParams { weight, attention }
            })
            .collect();
        Self { arch, layers }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &DenseMatrix| DenseMatrix::zeros(m.rows(), m.cols());
        Self {
            arch: self.arch,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: z(&l.weight),
                    attention: l.attention.as_ref().map(|a| AttentionParams {
                        proj: z(&a.proj),
                        vec: z(&a.vec),
                    }),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[1].weight.cols()
    }

    /// Every tensor in a fixed order: per layer weight, then projection and
    /// attention vector when present.
    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            if let Some(a) = &l.attention {
                out.push(&a.proj);
                out.push(&a.vec);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            if let Some(a) = &mut l.attention {
                out.push(&mut a.proj);
                out.push(&mut a.vec);
            }
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(format!("W{i}"));
            if l.attention.is_some() {
                out.push(format!("P{i}"));
                out.push(format!("a{i}"));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Checks layer count and that adjacent shapes agree.
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.layers.len() != 2 {
            return Err(GnnError::Shape(format!(
                "expected 2 layers, found {}",
                self.layers.len()
            )));
        }
        if self.layers[0].weight.cols() != self.layers[1].weight.rows() {
            return Err(GnnError::Shape("layer widths do not chain".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            match (&l.attention, self.arch) {
                (Some(a), Architecture::Attentive) => {
                    if a.proj.rows() != l.weight.rows() || a.vec.rows() != 1 || a.vec.cols() != 2 * a.proj.cols() {
                        return Err(GnnError::Shape(format!("attention shapes of layer {i}")));
                    }
                }
                (None, Architecture::Gcn) => {}
                _ => {
                    return Err(GnnError::Shape(format!(
                        "layer {i} attention does not match architecture"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, GnnError> {
        serde_json::to_string(self).map_err(|e| GnnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, GnnError> {
        let p: Self = serde_json::from_str(text).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
        for t in p.tensors() {
            if t.values().len() != t.rows() * t.cols() {
                return Err(GnnError::Checkpoint("tensor length does not match its shape".into()));
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), GnnError> {
        std::fs::write(path, self.to_json()?).map_err(|source| GnnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GnnError> {
        let text = std::fs::read_to_string(path).map_err(|source| GnnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
