//! Trains a small model on a rendered three-scene dataset and reports the
//! train-split accuracy and pose errors.
//!
//! Usage: cargo run --release --example train_synthetic -- [epochs]

use std::io::stdout;

use c2f_pose::clustering::build_centroid_sets;
use c2f_pose::data::{generate_synthetic, AugmentationConfig, SceneRegion, Split, SynthConfig};
use c2f_pose::harness::{predict, summarize, train, EvalOptions, TrainConfig, TrainSink};
use c2f_pose::loss::{Balance, LossParams};
use c2f_pose::model::{BackboneSpec, C2fModel, ModelConfig};
use candle_core::DType;

fn main() -> c2f_pose::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(300, |s| s.parse().expect("epochs"));
    let dir = tempfile::tempdir()?;
    let data = generate_synthetic(&SynthConfig::default(), dir.path())?;
    let sets = build_centroid_sets(&data.samples, 2, 2, 0)?;

    let model_cfg = ModelConfig {
        num_scenes: data.num_scenes(),
        token_dim: 64,
        layers: 2,
        heads: 4,
        mlp_dim: 128,
        dropout: 0.0,
        k_x: 2,
        k_q: 2,
        head_hidden: 256,
        backbone: BackboneSpec::tiny_64(),
    };
    let model = C2fModel::new(&model_cfg, DType::F32, 0)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 16,
        lr: 1e-3,
        lr_halving_epochs: 100,
        balance: Balance { s_x: 0.0, s_q: -3.0 },
        augmentation: AugmentationConfig::identity(64),
        augment: false,
        ..TrainConfig::default()
    };
    let loss = LossParams::new(cfg.balance, DType::F32)?;
    let started = std::time::Instant::now();
    let mut out = stdout();
    let summary = train(
        &model,
        &loss,
        &data,
        &sets,
        &cfg,
        TrainSink {
            log: if std::env::var_os("C2F_VERBOSE").is_some() {
                Some(&mut out)
            } else {
                None
            },
            checkpoint_dir: None,
        },
    )?;
    for (e, l) in summary.epoch_losses.iter().enumerate().filter(|(e, _)| e % 10 == 9) {
        println!("epoch {:4}  loss {l:.4}", e + 1);
    }
    println!("trained in {:.1} s", started.elapsed().as_secs_f64());

    let preds = predict(&model, &data, &sets, &EvalOptions::new(Split::Train, 64))?;
    let report = summarize(&data, Split::Train, &preds)?;
    print!("{}", report.to_text());
    for s in &report.scenes {
        let diag = SceneRegion::for_scene(s.scene).diagonal();
        println!(
            "scene {}: position error {:.1}% of box diagonal, orientation {:.2} deg",
            s.scene,
            100.0 * s.median.position_err / diag,
            s.median.orientation_err
        );
    }
    Ok(())
}
