//! Sampled forward/backward pass and the independent full-batch pass.

use rand::Rng;

use super::block::{LayerSample, SampleBlock};
use super::{Architecture, AttentionParams, GnnError, LayerParams, ModelParams};
use crate::graph::{Graph, Labels};
use crate::matrix::{axpy, dot, DenseMatrix};

/// Intermediates of one sampled layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Source inputs after dropout.
    pub input: DenseMatrix,
    /// Dropout multipliers, present only when dropout was active.
    pub mask: Option<DenseMatrix>,
    /// `input · P` in attentive mode.
    pub projected: Option<DenseMatrix>,
    /// Attention scores before ReLU, per target row and entry.
    pub scores: Vec<Vec<f64>>,
    /// Subset-local softmax of the ReLU'd scores.
    pub softmax: Vec<Vec<f64>>,
    /// `Σ_{j∈S} q_j / mass` per target row.
    pub subset_mass: Vec<f64>,
    /// Aggregation coefficients per target row and entry.
    pub coefs: Vec<Vec<f64>>,
    pub agg: DenseMatrix,
    pub pre: DenseMatrix,
}

impl LayerTrace {
    /// Adjusted attention `α'` of an entry in attentive mode, or the
    /// effective fixed weight recovered from the coefficient otherwise.
    pub fn alpha(&self, row: usize, entry: usize, sample: &LayerSample) -> f64 {
        if self.softmax[row].is_empty() {
            let e = &sample.rows[row].entries[entry];
            self.coefs[row][entry] * e.q / e.weight_factor
        } else {
            self.subset_mass[row] * self.softmax[row][entry]
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: [LayerTrace; 2],
    /// ReLU of the first layer, one row per first-layer target.
    pub hidden: DenseMatrix,
    /// One row per batch node.
    pub logits: DenseMatrix,
    pub batch: Vec<usize>,
}

fn gather_rows(m: &DenseMatrix, nodes: &[usize]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(nodes.len(), m.cols());
    for (r, &v) in nodes.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(v));
    }
    out
}

/// Inverted dropout. Multipliers are drawn only for nonzero entries; zero
/// entries are unaffected by any mask.
fn apply_dropout<R: Rng + ?Sized>(input: &mut DenseMatrix, rate: f64, rng: &mut R) -> Option<DenseMatrix> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = DenseMatrix::zeros(input.rows(), input.cols());
    for (x, m) in input.values_mut().iter_mut().zip(mask.values_mut()) {
        if *x != 0.0 {
            *m = if rng.random::<f64>() < rate { 0.0 } else { keep };
            *x *= *m;
        }
    }
    Some(mask)
}

fn split_vec(a: &AttentionParams) -> (&[f64], &[f64]) {
    a.vec.values().split_at(a.proj.cols())
}

fn check_finite(m: &DenseMatrix, what: &str) -> Result<(), GnnError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(GnnError::Numeric(what.to_string()))
    }
}

fn layer_forward(
    graph: &Graph,
    lp: &LayerParams,
    arch: Architecture,
    sample: &LayerSample,
    input: DenseMatrix,
    mask: Option<DenseMatrix>,
    layer: usize,
) -> Result<LayerTrace, GnnError> {
    if input.cols() != lp.weight.rows() {
        return Err(GnnError::Shape(format!(
            "layer {layer} input width {} but weight has {} rows",
            input.cols(),
            lp.weight.rows()
        )));
    }
    let rows = sample.rows.len();
    let mut scores = Vec::with_capacity(rows);
    let mut softmax = Vec::with_capacity(rows);
    let mut subset_mass = Vec::with_capacity(rows);
    let mut coefs = Vec::with_capacity(rows);
    let projected = match (arch, &lp.attention) {
        (Architecture::Attentive, Some(a)) => Some(input.matmul(&a.proj)),
        (Architecture::Gcn, None) => None,
        _ => {
            return Err(GnnError::Shape(format!(
                "layer {layer} attention does not match architecture"
            )))
        }
    };

    for row in &sample.rows {
        let mass: f64 = row.entries.iter().map(|e| e.q).sum::<f64>() / row.mass;
        match (&projected, &lp.attention) {
            (Some(z), Some(a)) => {
                let (a_l, a_r) = split_vec(a);
                let own = dot(a_l, z.row(row.target_src));
                let s: Vec<f64> = row.entries.iter().map(|e| own + dot(a_r, z.row(e.src))).collect();
                let top = s.iter().fold(0.0f64, |m, &x| m.max(x));
                let ex: Vec<f64> = s.iter().map(|&x| (x.max(0.0) - top).exp()).collect();
                let total: f64 = ex.iter().sum();
                let p: Vec<f64> = ex.iter().map(|e| e / total).collect();
                coefs.push(
                    row.entries
                        .iter()
                        .zip(&p)
                        .map(|(e, &pj)| mass * pj * e.weight_factor / e.q)
                        .collect(),
                );
                scores.push(s);
                softmax.push(p);
            }
            _ => {
                let weights = graph.edge_weights();
                let c: Vec<f64> = row
                    .entries
                    .iter()
                    .map(|e| weights[e.edge] * e.weight_factor / e.q)
                    .collect();
                if c.iter().any(|x| !x.is_finite()) {
                    return Err(GnnError::Data(
                        "GCN aggregation needs fixed edge weights; the graph was built in attentive mode".into(),
                    ));
                }
                coefs.push(c);
                scores.push(Vec::new());
                softmax.push(Vec::new());
            }
        }
        subset_mass.push(mass);
    }

    let mut agg = DenseMatrix::zeros(rows, input.cols());
    for (r, row) in sample.rows.iter().enumerate() {
        let out = agg.row_mut(r);
        for (e, &c) in row.entries.iter().zip(&coefs[r]) {
            axpy(c, input.row(e.src), out);
        }
    }
    let pre = agg.matmul(&lp.weight);
    check_finite(&pre, &format!("layer {layer} pre-activation"))?;
    Ok(LayerTrace {
        input,
        mask,
        projected,
        scores,
        softmax,
        subset_mass,
        coefs,
        agg,
        pre,
    })
}

/// Sampled forward pass over `block`. Dropout at `rate` is applied to
/// each layer's inputs using `rng`.
pub fn forward<R: Rng + ?Sized>(
    graph: &Graph,
    params: &ModelParams,
    block: &SampleBlock,
    dropout: f64,
    rng: &mut R,
) -> Result<ForwardTrace, GnnError> {
    params.validate()?;
    if graph.feature_dim() != params.input_dim() {
        return Err(GnnError::Shape(format!(
            "features have {} columns, model expects {}",
            graph.feature_dim(),
            params.input_dim()
        )));
    }
    if !block.is_closed() {
        return Err(GnnError::Sampling("sample block is not closed top-down".into()));
    }
    let [s0, s1] = &block.layers;

    let mut x0 = gather_rows(graph.features(), &s0.sources);
    let m0 = apply_dropout(&mut x0, dropout, rng);
    let t0 = layer_forward(graph, &params.layers[0], params.arch, s0, x0, m0, 0)?;

    let mut hidden = t0.pre.clone();
    hidden.values_mut().iter_mut().for_each(|x| *x = x.max(0.0));
    let mut x1 = hidden.clone();
    let m1 = apply_dropout(&mut x1, dropout, rng);
    let t1 = layer_forward(graph, &params.layers[1], params.arch, s1, x1, m1, 1)?;

    Ok(ForwardTrace {
        logits: t1.pre.clone(),
        hidden,
        batch: s1.targets(),
        layers: [t0, t1],
    })
}

/// Gradient of one layer. Accumulates into `grad` and, when requested,
/// returns the gradient with respect to the layer input before dropout.
fn layer_backward(
    lp: &LayerParams,
    sample: &LayerSample,
    trace: &LayerTrace,
    d_pre: &DenseMatrix,
    grad: &mut LayerParams,
    need_input_grad: bool,
) -> Option<DenseMatrix> {
    trace.agg.add_transpose_matmul_into(d_pre, &mut grad.weight);
    let d_agg = d_pre.matmul_transpose(&lp.weight);

    let mut d_input = need_input_grad.then(|| DenseMatrix::zeros(trace.input.rows(), trace.input.cols()));
    if let Some(d_in) = d_input.as_mut() {
        for (r, row) in sample.rows.iter().enumerate() {
            let g = d_agg.row(r);
            for (e, &c) in row.entries.iter().zip(&trace.coefs[r]) {
                axpy(c, g, d_in.row_mut(e.src));
            }
        }
    }

    if let (Some(a), Some(z), Some(ga)) = (&lp.attention, &trace.projected, grad.attention.as_mut()) {
        let (a_l, a_r) = split_vec(a);
        let da = a.proj.cols();
        let mut d_z = DenseMatrix::zeros(z.rows(), z.cols());
        let mut d_vec = vec![0.0; 2 * da];
        for (r, row) in sample.rows.iter().enumerate() {
            let g = d_agg.row(r);
            let p = &trace.softmax[r];
            let s = &trace.scores[r];
            let mass = trace.subset_mass[r];
            let g_p: Vec<f64> = row
                .entries
                .iter()
                .map(|e| dot(g, trace.input.row(e.src)) * mass * e.weight_factor / e.q)
                .collect();
            let mean: f64 = p.iter().zip(&g_p).map(|(a, b)| a * b).sum();
            let zi = z.row(row.target_src).to_vec();
            for (idx, e) in row.entries.iter().enumerate() {
                if s[idx] <= 0.0 {
                    continue;
                }
                let g_s = p[idx] * (g_p[idx] - mean);
                axpy(g_s, &zi, &mut d_vec[..da]);
                axpy(g_s, z.row(e.src), &mut d_vec[da..]);
                axpy(g_s, a_l, d_z.row_mut(row.target_src));
                axpy(g_s, a_r, d_z.row_mut(e.src));
            }
        }
        axpy(1.0, &d_vec, ga.vec.values_mut());
        trace.input.add_transpose_matmul_into(&d_z, &mut ga.proj);
        if let Some(d_in) = d_input.as_mut() {
            let back = d_z.matmul_transpose(&a.proj);
            axpy(1.0, back.values(), d_in.values_mut());
        }
    }

    if let (Some(d_in), Some(mask)) = (d_input.as_mut(), &trace.mask) {
        for (d, m) in d_in.values_mut().iter_mut().zip(mask.values()) {
            *d *= m;
        }
    }
    d_input
}

/// Mean loss over the batch and gradients of every parameter.
///
/// Multi-class labels use softmax cross-entropy; multi-label targets use
/// sigmoid binary cross-entropy averaged over all entries. Sampling
/// probabilities are constants.
pub fn loss_and_backward(
    params: &ModelParams,
    block: &SampleBlock,
    trace: &ForwardTrace,
    labels: &Labels,
) -> Result<(f64, ModelParams), GnnError> {
    let (loss, d_logits) = super::metrics::loss_with_grad(&trace.logits, &trace.batch, labels)?;
    let mut grads = params.zeros_like();
    let [s0, s1] = &block.layers;
    let [t0, t1] = &trace.layers;
    let (g0, g1) = grads.layers.split_at_mut(1);

    let mut d_hidden =
        layer_backward(&params.layers[1], s1, t1, &d_logits, &mut g1[0], true).expect("input gradient requested");
    for (d, &z) in d_hidden.values_mut().iter_mut().zip(t0.pre.values()) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
    layer_backward(&params.layers[0], s0, t0, &d_hidden, &mut g0[0], false);

    if !grads.is_finite() {
        return Err(GnnError::Numeric("gradients".into()));
    }
    Ok((loss, grads))
}

/// Output of the full-batch pass for every node.
#[derive(Debug, Clone)]
pub struct FullBatchOutput {
    pub hidden: DenseMatrix,
    pub logits: DenseMatrix,
}

/// Attention distribution over the full neighbor row of `v`, computed from
/// rows of `inputs` indexed by node id.
pub fn row_attention(graph: &Graph, attention: &AttentionParams, inputs: &DenseMatrix, v: usize) -> Vec<f64> {
    let (a_l, a_r) = split_vec(attention);
    let proj = |u: usize| -> Vec<f64> {
        let mut z = vec![0.0; attention.proj.cols()];
        for (p, &x) in inputs.row(u).iter().enumerate() {
            if x != 0.0 {
                axpy(x, attention.proj.row(p), &mut z);
            }
        }
        z
    };
    let own = dot(a_l, &proj(v));
    let r: Vec<f64> = graph
        .neighbors(v)
        .iter()
        .map(|&u| (own + dot(a_r, &proj(u))).max(0.0))
        .collect();
    softmax(&r)
}

fn softmax(r: &[f64]) -> Vec<f64> {
    let top = r.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let ex: Vec<f64> = r.iter().map(|&x| (x - top).exp()).collect();
    let total: f64 = ex.iter().sum();
    ex.iter().map(|e| e / total).collect()
}

/// One full-graph layer computed transform-first: `Σ_j c_ij (h_j W)`.
fn full_layer(graph: &Graph, lp: &LayerParams, input: &DenseMatrix) -> DenseMatrix {
    let transformed = input.matmul(&lp.weight);
    let projected = lp.attention.as_ref().map(|a| input.matmul(&a.proj));
    let mut out = DenseMatrix::zeros(graph.num_nodes(), lp.weight.cols());
    for v in 0..graph.num_nodes() {
        let neighbors = graph.neighbors(v);
        let coefs: Vec<f64> = match (&lp.attention, &projected) {
            (Some(a), Some(z)) => {
                let (a_l, a_r) = split_vec(a);
                let own = dot(a_l, z.row(v));
                let r: Vec<f64> = neighbors.iter().map(|&u| (own + dot(a_r, z.row(u))).max(0.0)).collect();
                softmax(&r)
            }
            _ => graph.row_weights(v).to_vec(),
        };
        let row = out.row_mut(v);
        for (&u, c) in neighbors.iter().zip(coefs) {
            axpy(c, transformed.row(u), row);
        }
    }
    out
}

/// Exact evaluation of the model on the whole graph, without sampling or
/// dropout.
pub fn full_batch_forward(graph: &Graph, params: &ModelParams) -> Result<FullBatchOutput, GnnError> {
    params.validate()?;
    if graph.feature_dim() != params.input_dim() {
        return Err(GnnError::Shape("feature width does not match model".into()));
    }
    if params.arch == Architecture::Gcn && graph.edge_weights().iter().any(|w| !w.is_finite()) {
        return Err(GnnError::Data("GCN evaluation needs fixed edge weights".into()));
    }
    let mut hidden = full_layer(graph, &params.layers[0], graph.features());
    hidden.values_mut().iter_mut().for_each(|x| *x = x.max(0.0));
    let logits = full_layer(graph, &params.layers[1], &hidden);
    check_finite(&logits, "full-batch logits")?;
    Ok(FullBatchOutput { hidden, logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::block::exhaustive_block;
    use crate::graph::{FeatureScaling, GraphOptions, Split, WeightMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lone_node() -> Graph {
        Graph::from_edges(
            1,
            &[],
            DenseMatrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap(),
            Labels::MultiClass {
                classes: vec![0],
                num_classes: 3,
            },
            vec![Split::Train],
            GraphOptions {
                weight_mode: WeightMode::RowNormalized,
                feature_scaling: FeatureScaling::None,
            },
        )
        .unwrap()
    }

    #[test]
    fn self_loop_only_gives_input_times_weight() {
        let g = lone_node();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::init(Architecture::Gcn, 3, 3, 3, &mut rng);
        p.layers[0].weight = DenseMatrix::identity(3);
        let block = exhaustive_block(&g, &[0]).unwrap();
        let t = forward(&g, &p, &block, 0.0, &mut rng).unwrap();
        assert_eq!(t.layers[0].pre.row(0), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_attention_is_uniform() {
        let g = crate::graph::generate_synthetic(
            &crate::graph::SyntheticSpec::new(12, 3.0, 2, 4, 0),
            GraphOptions {
                weight_mode: WeightMode::Attentive,
                ..GraphOptions::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::init(Architecture::Attentive, 4, 3, 2, &mut rng);
        for l in &mut p.layers {
            l.attention.as_mut().unwrap().vec.fill(0.0);
        }
        let block = exhaustive_block(&g, &[0, 1, 2]).unwrap();
        let t = forward(&g, &p, &block, 0.0, &mut rng).unwrap();
        for (r, row) in block.layers[1].rows.iter().enumerate() {
            let n = row.entries.len() as f64;
            for &pj in &t.layers[1].softmax[r] {
                assert!((pj - 1.0 / n).abs() < 1e-15);
            }
        }
    }
}
