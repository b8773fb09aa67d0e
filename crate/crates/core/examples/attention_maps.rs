//! Exports attention heatmaps for a few synthetic images after a short
//! training run, and prints the per-scene attention ranking.
//!
//! Usage: cargo run --release --example attention_maps -- [out_dir]

use c2f_pose::clustering::build_centroid_sets;
use c2f_pose::data::{augment, generate_synthetic, AugmentMode, AugmentationConfig, SynthConfig};
use c2f_pose::harness::{export_attention, train, TrainConfig, TrainSink};
use c2f_pose::loss::LossParams;
use c2f_pose::model::{BackboneSpec, C2fModel, CentroidTable, ModelConfig};
use candle_core::DType;

fn main() -> c2f_pose::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "attention_out".into());
    let dir = tempfile::tempdir()?;
    let data = generate_synthetic(
        &SynthConfig {
            samples_per_scene: 16,
            ..SynthConfig::default()
        },
        dir.path(),
    )?;
    let sets = build_centroid_sets(&data.samples, 1, 1, 0)?;
    let cfg = ModelConfig {
        num_scenes: data.num_scenes(),
        token_dim: 32,
        layers: 2,
        heads: 4,
        mlp_dim: 64,
        dropout: 0.0,
        head_hidden: 64,
        backbone: BackboneSpec::tiny_64(),
        ..ModelConfig::default()
    };
    let model = C2fModel::new(&cfg, DType::F32, 0)?;
    let train_cfg = TrainConfig {
        epochs: 20,
        lr: 1e-3,
        augmentation: AugmentationConfig::identity(64),
        augment: false,
        ..TrainConfig::default()
    };
    let loss = LossParams::new(train_cfg.balance, DType::F32)?;
    train(&model, &loss, &data, &sets, &train_cfg, TrainSink::default())?;

    let aug = AugmentationConfig::identity(64);
    let images = data
        .samples
        .iter()
        .step_by(16)
        .map(|s| {
            let name = s.image.file_stem().unwrap().to_string_lossy().to_string();
            Ok((
                name,
                augment(&image::open(&s.image)?.to_rgb8(), &aug, AugmentMode::Test)?,
            ))
        })
        .collect::<c2f_pose::Result<Vec<_>>>()?;
    let table = CentroidTable::new(&sets)?;
    for s in export_attention(&model, &table, &images, &out)? {
        println!(
            "{}: predicted scene {}, ranking {:?}, wrote {} files",
            s.name,
            s.predicted_scene,
            s.ranking,
            s.files.len()
        );
    }
    println!("heatmaps in {out}/");
    Ok(())
}
