use bandit_gnn::gnn::{draw_block, full_batch_forward, metrics, Architecture, ModelParams};
use bandit_gnn::graph::{generate_synthetic, Graph, GraphOptions, Labels, Split, SyntheticSpec, WeightMode};
use bandit_gnn::harness::{
    select_rows, simulate_regret, train, variance_report, RegretSpec, SamplerKind, StreamKind, TrainConfig,
};
use bandit_gnn::matrix::DenseMatrix;
use bandit_gnn::policy::{init_policy, BanditConfig, LearningRate, PlayMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthetic(seed: u64, mode: WeightMode) -> Graph {
    let options = GraphOptions {
        weight_mode: mode,
        ..GraphOptions::default()
    };
    generate_synthetic(&SyntheticSpec::new(100, 8.0, 3, 16, seed), options).unwrap()
}

fn small_config(arch: Architecture) -> TrainConfig {
    TrainConfig {
        epochs: 15,
        batch_size: 20,
        k: 2,
        arch,
        ..TrainConfig::default()
    }
}

#[test]
fn two_separable_nodes_are_fit() {
    let features = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let labels = Labels::MultiClass {
        classes: vec![0, 1],
        num_classes: 2,
    };
    let g = Graph::from_edges(2, &[], features, labels, vec![Split::Train; 2], GraphOptions::default()).unwrap();
    let config = TrainConfig {
        epochs: 50,
        dropout: 0.0,
        ..TrainConfig::default()
    };
    let report = train(&g, &config).unwrap();
    let out = full_batch_forward(&g, &report.params).unwrap();
    assert_eq!(metrics(&out.logits, &[0, 1], g.labels()).accuracy, 1.0);
    assert_eq!(report.logs.last().unwrap().train_acc, 1.0);
}

#[test]
fn training_is_deterministic_per_seed() {
    for arch in [Architecture::Gcn, Architecture::Attentive] {
        let mode = if arch == Architecture::Gcn {
            WeightMode::SymmetricNormalized
        } else {
            WeightMode::Attentive
        };
        let g = synthetic(3, mode);
        let a = train(&g, &small_config(arch)).unwrap();
        let b = train(&g, &small_config(arch)).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.params, b.params);
        assert_eq!(a.policy.to_json().unwrap(), b.policy.to_json().unwrap());
        let c = train(
            &g,
            &TrainConfig {
                seed: 8,
                ..small_config(arch)
            },
        )
        .unwrap();
        assert_ne!(a.params, c.params);
    }
}

#[test]
fn synthetic_training_learns() {
    let g = synthetic(5, WeightMode::SymmetricNormalized);
    let report = train(
        &g,
        &TrainConfig {
            epochs: 60,
            ..small_config(Architecture::Gcn)
        },
    )
    .unwrap();
    assert!(report.test.accuracy > 0.6, "{}", report.test.accuracy);
    assert_eq!(report.skipped_steps, 0);
    assert_eq!(report.logs.len(), 60);
    assert!(report.logs.windows(2).all(|w| w[1].step > w[0].step));
}

#[test]
fn uniform_sampler_never_updates() {
    let g = synthetic(1, WeightMode::SymmetricNormalized);
    let config = TrainConfig {
        sampler: SamplerKind::Uniform,
        ..small_config(Architecture::Gcn)
    };
    let report = train(&g, &config).unwrap();
    for v in 0..g.num_nodes() {
        assert_eq!(report.policy.step(v), 1);
        let n = report.policy.row_len(v) as f64;
        if !report.policy.is_exhaustive(v) {
            assert!(report.policy.q(v).iter().all(|&q| (q - 1.0 / n).abs() < 1e-15));
        }
    }
}

#[test]
fn bandit_skips_exhaustive_rows() {
    let g = synthetic(2, WeightMode::SymmetricNormalized);
    let report = train(
        &g,
        &TrainConfig {
            epochs: 3,
            ..small_config(Architecture::Gcn)
        },
    )
    .unwrap();
    let updated: u64 = (0..g.num_nodes()).map(|v| report.policy.step(v) - 1).sum();
    assert!(updated > 0);
    for v in 0..g.num_nodes() {
        if report.policy.is_exhaustive(v) {
            assert_eq!(report.policy.step(v), 1);
        }
    }
}

#[test]
fn blocks_are_local_and_closed() {
    let g = synthetic(4, WeightMode::SymmetricNormalized);
    for mode in [PlayMode::Single, PlayMode::Multiple] {
        let config = BanditConfig {
            k: 2,
            mode,
            ..BanditConfig::default()
        };
        let policy = init_policy(&g, config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch: Vec<usize> = (0..100).step_by(7).collect();
        let block = draw_block(&g, &policy, &batch, &mut rng).unwrap();
        assert!(block.is_closed());
        assert_eq!(block.batch(), batch);
        for layer in &block.layers {
            for row in &layer.rows {
                assert_eq!(layer.sources[row.target_src], row.node);
                for e in &row.entries {
                    assert!(g.neighbors(row.node).contains(&e.node));
                    assert_eq!(layer.sources[e.src], e.node);
                }
            }
        }
    }
}

#[test]
fn uniform_stream_stays_uniform() {
    for (mode, k) in [(PlayMode::Single, 1), (PlayMode::Multiple, 2)] {
        let spec = RegretSpec::new(8, k, 2000, StreamKind::Uniform, mode, 1);
        let trace = simulate_regret(&spec).unwrap();
        assert!(
            trace.max_deviation_from_uniform <= 0.05,
            "{}",
            trace.max_deviation_from_uniform
        );
        let last = trace.last();
        assert!(last.cum_ve <= 1.05 * last.cum_ve_star);
    }
}

#[test]
fn switch_stream_readapts() {
    let spec = RegretSpec::new(4, 1, 10_000, StreamKind::Switch { at: 0.5 }, PlayMode::Single, 2);
    let trace = simulate_regret(&spec).unwrap();
    assert!(trace.readaptation_steps.is_some());
    assert!(trace.bound_holds());
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("t,Ve_t,Ve_star,cum_Ve,cum_Ve_star,bound"));
    assert_eq!(text.lines().count(), 10_001);
}

#[test]
fn variance_report_columns() {
    let g = synthetic(6, WeightMode::SymmetricNormalized);
    let params = ModelParams::init(Architecture::Gcn, 16, 4, 3, &mut ChaCha8Rng::seed_from_u64(0));
    let config = BanditConfig {
        k: 2,
        learning_rate: LearningRate::Fixed(0.01),
        ..BanditConfig::default()
    };
    let policy = init_policy(&g, config).unwrap();
    let report = variance_report(&g, &params, &policy, 2, PlayMode::Single).unwrap();
    assert_eq!(report.rows.len(), g.nodes_in(Split::Train).len());
    assert!(report.sampled_rows > 0);
    for row in &report.rows {
        if row.degree <= 2 {
            assert_eq!(
                (row.uniform, row.bandit, row.oracle),
                (row.constant_term, row.constant_term, row.constant_term)
            );
        } else {
            // untrained policy is uniform
            assert!((row.bandit - row.uniform).abs() <= 1e-12 * row.uniform);
            assert!(row.oracle <= row.uniform * (1.0 + 1e-12));
        }
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .lines()
        .last()
        .unwrap()
        .starts_with("mean,"));
}

#[test]
fn report_files_are_written() {
    let g = synthetic(7, WeightMode::SymmetricNormalized);
    let report = train(
        &g,
        &TrainConfig {
            epochs: 2,
            ..small_config(Architecture::Gcn)
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write_to(dir.path()).unwrap();
    let loaded = ModelParams::load(&dir.path().join("model.json")).unwrap();
    assert_eq!(loaded, report.params);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,step,loss,train_acc,val_metric,mean_Ve,clip_events"));
}

#[test]
fn select_rows_keeps_order() {
    let m = DenseMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    assert_eq!(select_rows(&m, &[2, 0]).values(), &[3.0, 1.0]);
}

/// Regret at steps `T` and `4T` of one run with horizon `4T`, averaged over seeds.
fn regret_growth(n: usize, k: usize, t: u64, mode: PlayMode) -> (f64, f64) {
    let (mut short, mut long) = (0.0, 0.0);
    for seed in 0..4 {
        let trace = simulate_regret(&RegretSpec::new(n, k, 4 * t, StreamKind::Skewed, mode, seed)).unwrap();
        short += trace.regret_at(t);
        long += trace.regret_at(4 * t);
    }
    (short, long)
}

#[test]
fn regret_grows_sublinearly_on_small_rows() {
    for (n, k) in [(2, 1), (3, 2), (4, 2), (4, 3)] {
        for mode in [PlayMode::Single, PlayMode::Multiple] {
            let (short, long) = regret_growth(n, k, 10_000, mode);
            println!("{mode:?} n={n} k={k}: ratio {:.3}", long / short);
            assert!(short > 0.0);
            assert!(long < 2.5 * short, "{mode:?} n={n} k={k}: {long} vs {short}");
        }
    }
}
