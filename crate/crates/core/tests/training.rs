//! Properties of training, evaluation, checkpoints and attention export on
//! a small synthetic problem.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use c2f_pose::clustering::{build_centroid_sets, CentroidSet};
use c2f_pose::data::{augment, generate_synthetic, AugmentMode, AugmentationConfig, Dataset, Split, SynthConfig};
use c2f_pose::harness::{
    bench_scaling, evaluate, export_attention, train, BenchOptions, EvalOptions, EvalReport, StepRecord, TrainConfig,
    TrainSink,
};
use c2f_pose::loss::LossParams;
use c2f_pose::model::{
    load_checkpoint, save_checkpoint, to_f64_vec, BackboneSpec, C2fModel, CentroidTable, ModelConfig,
};
use candle_core::DType;

fn model_config(num_scenes: usize) -> ModelConfig {
    ModelConfig {
        num_scenes,
        token_dim: 32,
        layers: 1,
        heads: 4,
        mlp_dim: 64,
        dropout: 0.0,
        k_x: 2,
        k_q: 2,
        head_hidden: 64,
        backbone: BackboneSpec::tiny_64(),
    }
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr: 1e-3,
        augmentation: AugmentationConfig::identity(64),
        augment: false,
        ..TrainConfig::default()
    }
}

struct Fixture {
    dir: tempfile::TempDir,
    data: Dataset,
    sets: BTreeMap<usize, CentroidSet>,
    model: C2fModel,
    loss: LossParams,
    steps: Vec<StepRecord>,
}

fn trained() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(
            &SynthConfig {
                num_scenes: 3,
                samples_per_scene: 16,
                test_per_scene: 4,
                image_size: 64,
                seed: 11,
            },
            dir.path().join("data"),
        )
        .unwrap();
        let sets = build_centroid_sets(&data.split(Split::Train).samples, 2, 2, 0).unwrap();
        let model = C2fModel::new(&model_config(3), DType::F32, 5).unwrap();
        let cfg = train_config(12);
        let loss = LossParams::new(cfg.balance, DType::F32).unwrap();
        let summary = train(&model, &loss, &data, &sets, &cfg, TrainSink::default()).unwrap();
        Fixture {
            dir,
            data,
            sets,
            model,
            loss,
            steps: summary.steps,
        }
    })
}

/// Parameter count written out from the architecture.
fn analytic_params(cfg: &ModelConfig) -> usize {
    let (d, m, l, n) = (cfg.token_dim, cfg.mlp_dim, cfg.layers, cfg.num_scenes);
    let linear = |i: usize, o: usize| i * o + o;
    let norm = 2 * d;
    let attention = 4 * linear(d, d);
    let mlp = linear(d, m) + linear(m, d);
    let encoder = l * (2 * norm + attention + mlp) + norm;
    let decoder = l * (3 * norm + 2 * attention + mlp) + norm;
    let branch = |(h, w, c): (usize, usize, usize)| linear(c, d) + (h + w) * d / 2 + encoder + decoder + n * d;

    let mut backbone = 0;
    let mut c_in = cfg.backbone.input_channels;
    for stage in &cfg.backbone.stages {
        backbone += stage.channels * c_in * 9 + stage.channels;
        c_in = stage.channels;
    }
    let hh = cfg.head_hidden;
    backbone
        + branch(cfg.backbone.position_shape())
        + branch(cfg.backbone.orientation_shape())
        + linear(2 * d, 1)
        + linear(d, cfg.k_x)
        + linear(d, cfg.k_q)
        + linear(d, hh)
        + linear(hh, 3)
        + linear(d, hh)
        + linear(hh, 4)
}

#[test]
fn parameter_count_matches_closed_form() {
    let small = model_config(1);
    let counts = [1usize, 2, 7, 50];
    let rows = bench_scaling(
        &small,
        &counts,
        &BenchOptions {
            trials: 1,
            warmup: 0,
            ..BenchOptions::default()
        },
    )
    .unwrap();
    for (row, &n) in rows.iter().zip(&counts) {
        let cfg = ModelConfig {
            num_scenes: n,
            ..small.clone()
        };
        assert_eq!(row.num_params, analytic_params(&cfg), "N={n}");
        assert_eq!(row.param_bytes, 4 * row.num_params);
    }
    for cfg in [
        ModelConfig::default(),
        ModelConfig {
            num_scenes: 1000,
            k_x: 3,
            k_q: 5,
            ..ModelConfig::default()
        },
    ] {
        let model = C2fModel::new(&cfg, DType::F32, 0).unwrap();
        assert_eq!(model.num_params(), analytic_params(&cfg));
    }
}

#[test]
fn initial_loss_matches_uniform_classifiers() {
    let f = trained();
    let first = &f.steps[0].loss;
    let classification = first.scene_nll + first.position_centroid_nll + first.orientation_centroid_nll;
    let uniform = 3f64.ln() + 2f64.ln() + 2f64.ln();
    assert!(
        (classification - uniform).abs() <= 0.2 * uniform,
        "{classification} vs {uniform}"
    );
    let expected = uniform + first.pose;
    assert!(
        (first.total - expected).abs() <= 0.2 * expected,
        "{} vs {expected}",
        first.total
    );
}

#[test]
fn smoothed_training_loss_decreases() {
    let f = trained();
    let windows: Vec<f64> = f
        .steps
        .chunks_exact(20)
        .map(|w| w.iter().map(|s| s.loss.total).sum::<f64>() / 20.0)
        .collect();
    assert!(windows.len() >= 4);
    // Minibatch noise allows small bumps; a sign error would not.
    for pair in windows.windows(2) {
        assert!(pair[1] <= 1.05 * pair[0], "{windows:?}");
    }
    assert!(windows[windows.len() - 1] < 0.7 * windows[0], "{windows:?}");
}

#[test]
fn zero_epochs_leaves_parameters_untouched() {
    let f = trained();
    let model = C2fModel::new(&model_config(3), DType::F32, 5).unwrap();
    let fresh = C2fModel::new(&model_config(3), DType::F32, 5).unwrap();
    let loss = LossParams::new(Default::default(), DType::F32).unwrap();
    let summary = train(&model, &loss, &f.data, &f.sets, &train_config(0), TrainSink::default()).unwrap();
    assert!(summary.steps.is_empty());
    for ((name, a), (_, b)) in model.params().iter().zip(fresh.params().iter()) {
        assert_eq!(
            to_f64_vec(a.as_tensor()).unwrap(),
            to_f64_vec(b.as_tensor()).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn evaluation_is_deterministic_and_survives_checkpointing() {
    let f = trained();
    let opts = EvalOptions::new(Split::Test, 64);
    let a = evaluate(&f.model, &f.data, &f.sets, &opts).unwrap();
    let b = evaluate(&f.model, &f.data, &f.sets, &opts).unwrap();
    assert_eq!(a, b);

    let path = f.dir.path().join("roundtrip.safetensors");
    save_checkpoint(
        &path,
        &f.model,
        &f.loss,
        Some(&CentroidTable::new(&f.sets).unwrap()),
        Some(12),
    )
    .unwrap();
    let (reloaded, loss, meta) = load_checkpoint(&path).unwrap();
    assert_eq!(meta.epoch, Some(12));
    assert_eq!(loss.balance().unwrap(), f.loss.balance().unwrap());
    let c = evaluate(&reloaded, &f.data, &f.sets, &opts).unwrap();
    assert_eq!(a, c);
    assert_eq!(EvalReport::from_text(&a.to_text()).unwrap().to_text(), a.to_text());
}

#[test]
fn attention_export_layout() {
    let f = trained();
    let aug = AugmentationConfig::identity(64);
    let images: Vec<_> = f
        .data
        .split(Split::Test)
        .samples
        .iter()
        .take(3)
        .enumerate()
        .map(|(i, s)| {
            let img = image::open(&s.image).unwrap().to_rgb8();
            (format!("img{i}"), augment(&img, &aug, AugmentMode::Test).unwrap())
        })
        .collect();
    let out = f.dir.path().join("attention");
    let table = CentroidTable::new(&f.sets).unwrap();
    let summaries = export_attention(&f.model, &table, &images, &out).unwrap();
    assert_eq!(summaries.len(), 3);
    for s in &summaries {
        let pngs: Vec<_> = s
            .files
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        assert_eq!(pngs.len(), 3 + 2);
        let mut ranking = s.ranking.clone();
        ranking.sort_unstable();
        assert_eq!(ranking, vec![0, 1, 2]);
        for p in pngs {
            let img = image::open(p).unwrap().to_luma8();
            assert_eq!(img.dimensions(), (64, 64));
        }
    }
    assert!(out.join("ranking.txt").exists());
}
