//! Graph storage: CSR adjacency with self-loops, fixed aggregation weights,
//! node features, labels and train/validation/test splits.

mod io;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{norm_sq, DenseMatrix};

pub use io::{import_linqs, load_graph, save_graph, GraphFiles, LinqsSplit};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Placeholder stored in `edge_weights` when weights come from attention.
pub const UNUSED_WEIGHT: f64 = f64::NAN;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("structural error: {0}")]
    Structural(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How `α_ij` is derived for fixed-weight aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `D̃⁻¹Ã`
    RowNormalized,
    /// `D̃^{-1/2} Ã D̃^{-1/2}`
    SymmetricNormalized,
    /// Weights are produced by attention parameters at run time.
    Attentive,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RowNormalized => "row_normalized",
            Self::SymmetricNormalized => "symmetric_normalized",
            Self::Attentive => "attentive",
        })
    }
}

impl FromStr for WeightMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "row_normalized" | "row" => Ok(Self::RowNormalized),
            "symmetric_normalized" | "symmetric" => Ok(Self::SymmetricNormalized),
            "attentive" => Ok(Self::Attentive),
            other => Err(format!("unknown weight mode `{other}`")),
        }
    }
}

/// Feature preprocessing applied at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScaling {
    None,
    /// Every nonzero row is rescaled to unit Euclidean norm.
    UnitNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphOptions {
    pub weight_mode: WeightMode,
    pub feature_scaling: FeatureScaling,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            weight_mode: WeightMode::SymmetricNormalized,
            feature_scaling: FeatureScaling::UnitNorm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MultiClass,
    MultiLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    MultiClass {
        classes: Vec<usize>,
        num_classes: usize,
    },
    /// One 0/1 row per node.
    MultiLabel(DenseMatrix),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Self::MultiClass { classes, .. } => classes.len(),
            Self::MultiLabel(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            Self::MultiClass { num_classes, .. } => *num_classes,
            Self::MultiLabel(m) => m.cols(),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Self::MultiClass { .. } => Task::MultiClass,
            Self::MultiLabel(_) => Task::MultiLabel,
        }
    }

    /// Labels restricted to `nodes`, in order.
    pub fn select(&self, nodes: &[usize]) -> Labels {
        match self {
            Self::MultiClass { classes, num_classes } => Labels::MultiClass {
                classes: nodes.iter().map(|&v| classes[v]).collect(),
                num_classes: *num_classes,
            },
            Self::MultiLabel(m) => {
                let rows: Vec<Vec<f64>> = nodes.iter().map(|&v| m.row(v).to_vec()).collect();
                let mut sub = DenseMatrix::zeros(nodes.len(), m.cols());
                for (r, row) in rows.iter().enumerate() {
                    sub.row_mut(r).copy_from_slice(row);
                }
                Labels::MultiLabel(sub)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
            Self::Unassigned => "none",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            "none" => Ok(Self::Unassigned),
            other => Err(format!("unknown split token `{other}`")),
        }
    }
}

/// Immutable attributed graph in compressed sparse row form.
///
/// Rows are sorted by neighbor id and always contain the node itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    neighbor_ids: Vec<usize>,
    edge_weights: Vec<f64>,
    weight_mode: WeightMode,
    features: DenseMatrix,
    labels: Labels,
    splits: Vec<Split>,
}

impl Graph {
    /// Builds a graph from an undirected edge list.
    ///
    /// Both directions are materialized, duplicates are dropped and a
    /// self-loop is added to every row before weights are computed.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        mut features: DenseMatrix,
        labels: Labels,
        splits: Vec<Split>,
        options: GraphOptions,
    ) -> Result<Self, GraphError> {
        if features.rows() != num_nodes {
            return Err(GraphError::Structural(format!(
                "{} feature rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if labels.len() != num_nodes {
            return Err(GraphError::Structural(format!(
                "{} label rows for {num_nodes} nodes",
                labels.len()
            )));
        }
        if splits.len() != num_nodes {
            return Err(GraphError::Structural(format!(
                "{} split rows for {num_nodes} nodes",
                splits.len()
            )));
        }
        if let Labels::MultiClass { classes, num_classes } = &labels {
            if let Some((v, c)) = classes.iter().enumerate().find(|(_, &c)| c >= *num_classes) {
                return Err(GraphError::Structural(format!(
                    "node {v} has class {c} but only {num_classes} classes exist"
                )));
            }
        }

        let mut adjacency: Vec<Vec<usize>> = (0..num_nodes).map(|v| vec![v]).collect();
        for &(src, dst) in edges {
            if src >= num_nodes || dst >= num_nodes {
                return Err(GraphError::Structural(format!(
                    "edge ({src}, {dst}) references a node outside 0..{num_nodes}"
                )));
            }
            adjacency[src].push(dst);
            adjacency[dst].push(src);
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbor_ids = Vec::new();
        row_offsets.push(0);
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
            neighbor_ids.extend_from_slice(row);
            row_offsets.push(neighbor_ids.len());
        }

        if options.feature_scaling == FeatureScaling::UnitNorm {
            scale_rows_to_unit_norm(&mut features);
        }

        let mut graph = Self {
            num_nodes,
            row_offsets,
            neighbor_ids,
            edge_weights: Vec::new(),
            weight_mode: options.weight_mode,
            features,
            labels,
            splits,
        };
        graph.edge_weights = compute_weights(&graph, options.weight_mode)?;
        Ok(graph)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored directed edges, self-loops included.
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.neighbor_ids.len()
    }

    #[inline]
    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    #[inline]
    pub fn row_range(&self, v: usize) -> std::ops::Range<usize> {
        self.row_offsets[v]..self.row_offsets[v + 1]
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbor_ids[self.row_range(v)]
    }

    #[inline]
    pub fn neighbor_ids(&self) -> &[usize] {
        &self.neighbor_ids
    }

    /// Degree in `Ã = A + I`.
    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    #[inline]
    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    #[inline]
    pub fn row_weights(&self, v: usize) -> &[f64] {
        &self.edge_weights[self.row_range(v)]
    }

    #[inline]
    pub fn weight_mode(&self) -> WeightMode {
        self.weight_mode
    }

    #[inline]
    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    #[inline]
    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn split_mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|&s| s == split).collect()
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes).filter(|&v| self.splits[v] == split).collect()
    }

    /// Position of `u` within row `v`, if adjacent.
    pub fn edge_position(&self, v: usize, u: usize) -> Option<usize> {
        self.neighbors(v)
            .binary_search(&u)
            .ok()
            .map(|p| self.row_offsets[v] + p)
    }

    /// Same topology and data with weights recomputed for another mode.
    pub fn with_weight_mode(&self, mode: WeightMode) -> Result<Graph, GraphError> {
        let mut g = self.clone();
        g.edge_weights = compute_weights(self, mode)?;
        g.weight_mode = mode;
        Ok(g)
    }

    /// Checks the structural invariants. Used by tests and after loading.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::Structural(m));
        if self.row_offsets.len() != self.num_nodes + 1 {
            return bad("row_offsets length".into());
        }
        if self.row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_offsets decreasing".into());
        }
        if *self.row_offsets.last().unwrap_or(&0) != self.neighbor_ids.len() {
            return bad("row_offsets end mismatch".into());
        }
        for v in 0..self.num_nodes {
            let row = self.neighbors(v);
            if row.iter().any(|&u| u >= self.num_nodes) {
                return bad(format!("row {v} has out-of-range neighbor"));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {v} unsorted or duplicated"));
            }
            if row.binary_search(&v).is_err() {
                return bad(format!("row {v} lacks its self-loop"));
            }
        }
        if self.weight_mode == WeightMode::RowNormalized {
            for v in 0..self.num_nodes {
                let s: f64 = self.row_weights(v).iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return bad(format!("row {v} weights sum to {s}"));
                }
            }
        }
        Ok(())
    }
}

/// Aggregation weights for every stored edge under `mode`.
pub fn compute_weights(graph: &Graph, mode: WeightMode) -> Result<Vec<f64>, GraphError> {
    let n = graph.num_nodes();
    if let Some(v) = (0..n).find(|&v| graph.degree(v) == 0) {
        return Err(GraphError::Internal(format!(
            "row {v} is empty after self-loop insertion"
        )));
    }
    let mut weights = Vec::with_capacity(graph.num_edges());
    match mode {
        WeightMode::RowNormalized => {
            for v in 0..n {
                let w = 1.0 / graph.degree(v) as f64;
                weights.extend(std::iter::repeat(w).take(graph.degree(v)));
            }
        }
        WeightMode::SymmetricNormalized => {
            for v in 0..n {
                let dv = graph.degree(v) as f64;
                for &u in graph.neighbors(v) {
                    weights.push(1.0 / (dv * graph.degree(u) as f64).sqrt());
                }
            }
        }
        WeightMode::Attentive => weights.resize(graph.num_edges(), UNUSED_WEIGHT),
    }
    Ok(weights)
}

/// Scales each nonzero row to unit length. Rows already within 1e-12 of
/// unit length are left untouched so the operation is idempotent.
fn scale_rows_to_unit_norm(features: &mut DenseMatrix) {
    for r in 0..features.rows() {
        let row = features.row_mut(r);
        let norm = norm_sq(row).sqrt();
        if norm > 0.0 && (norm - 1.0).abs() > 1e-12 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
}
