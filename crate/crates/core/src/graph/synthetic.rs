//! Seeded stochastic-block graphs with class-correlated features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureScaling, Graph, GraphError, GraphOptions, Labels, Split};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub avg_degree: f64,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub seed: u64,
    /// Ratio of intra-class to inter-class edge probability.
    pub homophily: f64,
    /// Standard deviation of per-node feature noise around the class mean.
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn new(num_nodes: usize, avg_degree: f64, num_classes: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            num_nodes,
            avg_degree,
            num_classes,
            feature_dim,
            seed,
            homophily: 5.0,
            noise: 1.0,
        }
    }
}

/// Generates a graph where node `i` belongs to class `i % num_classes`.
///
/// Edge probabilities are chosen so the expected degree (self-loops
/// excluded) equals `avg_degree`. Features are always scaled to unit norm.
/// Splits are 60/20/20 over a seeded permutation.
pub fn generate_synthetic(spec: &SyntheticSpec, options: GraphOptions) -> Result<Graph, GraphError> {
    let SyntheticSpec {
        num_nodes: n,
        avg_degree,
        num_classes: c,
        feature_dim: d,
        seed,
        homophily,
        noise,
    } = *spec;
    if n < 2 {
        return Err(GraphError::Parameter("need at least 2 nodes".into()));
    }
    if !(avg_degree >= 1.0) {
        return Err(GraphError::Parameter("average degree must be at least 1".into()));
    }
    if c == 0 || d == 0 {
        return Err(GraphError::Parameter(
            "classes and feature dimension must be positive".into(),
        ));
    }
    if !(homophily >= 1.0) || !(noise >= 0.0) {
        return Err(GraphError::Parameter("homophily must be >= 1 and noise >= 0".into()));
    }

    let class_of = |v: usize| v % c;
    let mut per_class = vec![0usize; c];
    for v in 0..n {
        per_class[class_of(v)] += 1;
    }
    let intra_pairs: f64 = per_class.iter().map(|&m| (m * m.saturating_sub(1) / 2) as f64).sum();
    let all_pairs = (n * (n - 1) / 2) as f64;
    let inter_pairs = all_pairs - intra_pairs;
    let expected_edges = avg_degree * n as f64 / 2.0;
    let p_out = expected_edges / (homophily * intra_pairs + inter_pairs);
    let p_in = homophily * p_out;
    if p_out > 1.0 || (intra_pairs > 0.0 && p_in > 1.0) {
        return Err(GraphError::Parameter(format!(
            "average degree {avg_degree} needs an edge probability above 1 on {n} nodes"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if class_of(i) == class_of(j) { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut features = DenseMatrix::zeros(n, d);
    for v in 0..n {
        let mean = &means[class_of(v)];
        for (x, m) in features.row_mut(v).iter_mut().zip(mean) {
            let z: f64 = rng.sample(StandardNormal);
            *x = m + noise * z;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let n_train = (0.6 * n as f64).ceil() as usize;
    let n_val = (0.2 * n as f64).floor() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &v) in order.iter().enumerate() {
        if rank < n_train {
            splits[v] = Split::Train;
        } else if rank < n_train + n_val {
            splits[v] = Split::Val;
        }
    }

    let labels = Labels::MultiClass {
        classes: (0..n).map(class_of).collect(),
        num_classes: c,
    };
    let options = GraphOptions {
        feature_scaling: FeatureScaling::UnitNorm,
        ..options
    };
    Graph::from_edges(n, &edges, features, labels, splits, options)
}
