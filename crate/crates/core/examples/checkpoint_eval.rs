//! Trains briefly, saves a checkpoint, reloads it and evaluates both the
//! in-memory and the reloaded model on the test split.

use c2f_pose::clustering::build_centroid_sets;
use c2f_pose::data::{generate_synthetic, AugmentationConfig, Split, SynthConfig};
use c2f_pose::harness::{evaluate, train, EvalOptions, TrainConfig, TrainSink};
use c2f_pose::loss::LossParams;
use c2f_pose::model::{load_checkpoint, save_checkpoint, BackboneSpec, C2fModel, CentroidTable, ModelConfig};
use candle_core::DType;

fn main() -> c2f_pose::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = generate_synthetic(
        &SynthConfig {
            samples_per_scene: 24,
            test_per_scene: 8,
            ..SynthConfig::default()
        },
        dir.path().join("data"),
    )?;
    let sets = build_centroid_sets(&data.split(Split::Train).samples, 2, 2, 0)?;
    let cfg = ModelConfig {
        num_scenes: data.num_scenes(),
        token_dim: 32,
        layers: 1,
        heads: 4,
        mlp_dim: 64,
        dropout: 0.0,
        k_x: 2,
        k_q: 2,
        head_hidden: 64,
        backbone: BackboneSpec::tiny_64(),
    };
    let model = C2fModel::new(&cfg, DType::F32, 0)?;
    let train_cfg = TrainConfig {
        epochs: 10,
        lr: 1e-3,
        augmentation: AugmentationConfig::identity(64),
        augment: false,
        ..TrainConfig::default()
    };
    let loss = LossParams::new(train_cfg.balance, DType::F32)?;
    let summary = train(&model, &loss, &data, &sets, &train_cfg, TrainSink::default())?;
    println!("epoch losses: {:.3?}", summary.epoch_losses);

    let path = dir.path().join("model.safetensors");
    save_checkpoint(
        &path,
        &model,
        &loss,
        Some(&CentroidTable::new(&sets)?),
        Some(train_cfg.epochs),
    )?;
    let (reloaded, reloaded_loss, meta) = load_checkpoint(&path)?;
    println!(
        "checkpoint v{} at epoch {:?}, balance {:?}",
        meta.version,
        meta.epoch,
        reloaded_loss.balance()?
    );

    let opts = EvalOptions::new(Split::Test, 64);
    let before = evaluate(&model, &data, &sets, &opts)?;
    let after = evaluate(&reloaded, &data, &sets, &opts)?;
    print!("{}", after.to_text());
    println!("reloaded report identical: {}", before == after);
    Ok(())
}
