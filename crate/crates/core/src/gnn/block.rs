//! Top-down neighbor sampling for one minibatch.

use std::collections::HashMap;

use rand::Rng;

use super::GnnError;
use crate::graph::Graph;
use crate::policy::{PlayMode, PolicyState};

/// One distinct sampled neighbor of a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    /// Row of the neighbor in the layer's source list.
    pub src: usize,
    pub node: usize,
    /// Index into the graph's CSR edge arrays.
    pub edge: usize,
    /// Position within the target's neighbor row.
    pub pos: usize,
    /// Times drawn this step (single play may repeat arms).
    pub count: usize,
    /// Sampling probability used for the draw.
    pub q: f64,
    /// `count / k` for single play, `1` otherwise.
    pub weight_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub node: usize,
    /// Row of the target itself in the layer's source list.
    pub target_src: usize,
    /// What the row's `q` sums to: `1`, `k`, or `n` when exhaustive.
    pub mass: f64,
    pub exhaustive: bool,
    /// Raw draw as returned by the policy, in row positions.
    pub draw: Vec<usize>,
    pub entries: Vec<Entry>,
}

/// Sampled aggregation for one layer. `sources` lists the nodes whose
/// inputs are needed: the targets first, then newly reached neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSample {
    pub sources: Vec<usize>,
    pub rows: Vec<TargetRow>,
}

impl LayerSample {
    pub fn targets(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.node).collect()
    }
}

/// Sampled computation graph. `layers[0]` produces hidden embeddings for
/// every source of `layers[1]`, which produces the output logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub mode: PlayMode,
    pub k: usize,
    pub layers: [LayerSample; 2],
}

impl SampleBlock {
    pub fn batch(&self) -> Vec<usize> {
        self.layers[1].targets()
    }

    /// Every neighbor used by the output layer is a target of the layer
    /// below, in the same order.
    pub fn is_closed(&self) -> bool {
        let needed = &self.layers[1].sources;
        let below = self.layers[0].targets();
        *needed == below
            && self.layers[1]
                .rows
                .iter()
                .flat_map(|r| &r.entries)
                .all(|e| needed[e.src] == e.node)
    }
}

struct Sources {
    nodes: Vec<usize>,
    index: HashMap<usize, usize>,
}

impl Sources {
    fn new(targets: &[usize]) -> Result<Self, GnnError> {
        let mut s = Self {
            nodes: Vec::with_capacity(targets.len() * 2),
            index: HashMap::with_capacity(targets.len() * 2),
        };
        for &t in targets {
            if s.index.insert(t, s.nodes.len()).is_some() {
                return Err(GnnError::Sampling(format!("node {t} appears twice among targets")));
            }
            s.nodes.push(t);
        }
        Ok(s)
    }

    fn get_or_insert(&mut self, node: usize) -> usize {
        let next = self.nodes.len();
        *self.index.entry(node).or_insert_with(|| {
            self.nodes.push(node);
            next
        })
    }
}

fn build_row(
    graph: &Graph,
    v: usize,
    draw: Vec<usize>,
    q_row: &[f64],
    mass: f64,
    exhaustive: bool,
    single_k: Option<usize>,
    sources: &mut Sources,
) -> TargetRow {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    let mut sorted = draw.clone();
    sorted.sort_unstable();
    for pos in sorted {
        match counts.last_mut() {
            Some((p, c)) if *p == pos => *c += 1,
            _ => counts.push((pos, 1)),
        }
    }
    let base = graph.row_offsets()[v];
    let neighbors = graph.neighbors(v);
    let entries = counts
        .into_iter()
        .map(|(pos, count)| {
            let node = neighbors[pos];
            Entry {
                src: sources.get_or_insert(node),
                node,
                edge: base + pos,
                pos,
                count,
                q: q_row[pos],
                weight_factor: match single_k {
                    Some(k) if !exhaustive => count as f64 / k as f64,
                    _ => 1.0,
                },
            }
        })
        .collect();
    TargetRow {
        node: v,
        target_src: sources.index[&v],
        mass,
        exhaustive,
        draw,
        entries,
    }
}

fn sample_layer<R: Rng + ?Sized>(
    graph: &Graph,
    policy: &PolicyState,
    targets: &[usize],
    rng: &mut R,
) -> Result<LayerSample, GnnError> {
    let mut sources = Sources::new(targets)?;
    let single_k = (policy.config().mode == PlayMode::Single).then_some(policy.config().k);
    let mut rows = Vec::with_capacity(targets.len());
    for &v in targets {
        let draw = policy.sample(v, rng).map_err(|e| GnnError::Sampling(e.to_string()))?;
        rows.push(build_row(
            graph,
            v,
            draw,
            policy.q(v),
            policy.row_mass(v),
            policy.is_exhaustive(v),
            single_k,
            &mut sources,
        ));
    }
    Ok(LayerSample {
        sources: sources.nodes,
        rows,
    })
}

/// Samples neighbors top-down from the batch using `policy`.
pub fn draw_block<R: Rng + ?Sized>(
    graph: &Graph,
    policy: &PolicyState,
    batch: &[usize],
    rng: &mut R,
) -> Result<SampleBlock, GnnError> {
    if policy.num_rows() != graph.num_nodes() {
        return Err(GnnError::Shape("policy rows do not match graph nodes".into()));
    }
    if let Some(&v) = batch.iter().find(|&&v| v >= graph.num_nodes()) {
        return Err(GnnError::Sampling(format!("batch node {v} out of range")));
    }
    let top = sample_layer(graph, policy, batch, rng)?;
    let bottom = sample_layer(graph, policy, &top.sources, rng)?;
    Ok(SampleBlock {
        mode: policy.config().mode,
        k: policy.config().k,
        layers: [bottom, top],
    })
}

/// Block using every neighbor with probability one.
pub fn exhaustive_block(graph: &Graph, batch: &[usize]) -> Result<SampleBlock, GnnError> {
    let layer = |targets: &[usize]| -> Result<LayerSample, GnnError> {
        let mut sources = Sources::new(targets)?;
        let rows = targets
            .iter()
            .map(|&v| {
                let n = graph.degree(v);
                build_row(
                    graph,
                    v,
                    (0..n).collect(),
                    &vec![1.0; n],
                    n as f64,
                    true,
                    None,
                    &mut sources,
                )
            })
            .collect();
        Ok(LayerSample {
            sources: sources.nodes,
            rows,
        })
    };
    let top = layer(batch)?;
    let bottom = layer(&top.sources)?;
    Ok(SampleBlock {
        mode: PlayMode::Multiple,
        k: graph.max_degree(),
        layers: [bottom, top],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, GraphOptions, SyntheticSpec};
    use crate::policy::{init_policy, BanditConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blocks_are_closed() {
        let g = generate_synthetic(&SyntheticSpec::new(40, 4.0, 2, 3, 1), GraphOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [PlayMode::Single, PlayMode::Multiple] {
            let cfg = BanditConfig {
                k: 2,
                mode,
                ..BanditConfig::default()
            };
            let policy = init_policy(&g, cfg).unwrap();
            let b = draw_block(&g, &policy, &[0, 5, 9], &mut rng).unwrap();
            assert!(b.is_closed());
            assert_eq!(b.batch(), vec![0, 5, 9]);
            for row in b.layers.iter().flat_map(|l| &l.rows) {
                let used: usize = row.entries.iter().map(|e| e.count).sum();
                assert_eq!(used, row.draw.len());
                if !row.exhaustive {
                    assert_eq!(row.draw.len(), 2);
                }
            }
        }
        let e = exhaustive_block(&g, &[3, 4]).unwrap();
        assert!(e.is_closed());
        assert_eq!(e.layers[1].rows[0].entries.len(), g.degree(3));
    }

    #[test]
    fn duplicate_batch_rejected() {
        let g = generate_synthetic(&SyntheticSpec::new(10, 2.0, 2, 3, 1), GraphOptions::default()).unwrap();
        assert!(exhaustive_block(&g, &[1, 1]).is_err());
    }
}
