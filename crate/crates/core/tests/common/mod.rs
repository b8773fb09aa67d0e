//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use c2f_pose::clustering::{build_centroid_sets, CentroidSet};
use c2f_pose::data::{generate_synthetic, AugmentationConfig, Dataset, SynthConfig};
use c2f_pose::harness::{train, TrainConfig, TrainSink};
use c2f_pose::loss::{Balance, LossParams};
use c2f_pose::model::{BackboneSpec, C2fModel, ModelConfig};
use candle_core::DType;

/// Serializes the heavy tests so timings are not distorted by each other.
pub fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

pub const OVERFIT_EPOCHS: usize = 300;

pub fn overfit_model_config(num_scenes: usize) -> ModelConfig {
    ModelConfig {
        num_scenes,
        token_dim: 64,
        layers: 2,
        heads: 4,
        mlp_dim: 128,
        dropout: 0.0,
        k_x: 2,
        k_q: 2,
        head_hidden: 256,
        backbone: BackboneSpec::tiny_64(),
    }
}

pub fn overfit_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 1e-3,
        lr_halving_epochs: 100,
        balance: Balance::default(),
        augmentation: AugmentationConfig::identity(64),
        augment: false,
        ..TrainConfig::default()
    }
}

pub struct Overfit {
    pub dir: tempfile::TempDir,
    pub data: Dataset,
    pub sets: BTreeMap<usize, CentroidSet>,
    pub model: C2fModel,
    pub epochs: usize,
    pub train_seconds: f64,
    pub epoch_losses: Vec<f64>,
}

/// Three rendered scenes of 64 images each, with a small model trained to
/// fit them. Built once per test binary.
pub fn overfit() -> &'static Overfit {
    static FIXTURE: OnceLock<Overfit> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&SynthConfig::default(), dir.path()).unwrap();
        let sets = build_centroid_sets(&data.samples, 2, 2, 0).unwrap();
        let model = C2fModel::new(&overfit_model_config(data.num_scenes()), DType::F32, 0).unwrap();
        let cfg = overfit_train_config(OVERFIT_EPOCHS);
        let loss = LossParams::new(cfg.balance, DType::F32).unwrap();
        let started = Instant::now();
        let summary = train(&model, &loss, &data, &sets, &cfg, TrainSink::default()).unwrap();
        Overfit {
            dir,
            data,
            sets,
            model,
            epochs: OVERFIT_EPOCHS,
            train_seconds: started.elapsed().as_secs_f64(),
            epoch_losses: summary.epoch_losses,
        }
    })
}
