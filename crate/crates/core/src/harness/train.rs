use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use candle_core::backprop::GradStore;
use candle_core::Var;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::PreparedSet;
use crate::clustering::CentroidSet;
use crate::data::{AugmentMode, AugmentationConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::loss::{multi_scene_loss, Balance, LossBreakdown, LossParams};
use crate::model::{save_checkpoint, C2fModel, CentroidTable, ForwardOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Halve the learning rate every this many epochs; 0 keeps it constant.
    pub lr_halving_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Initial loss balance terms.
    pub balance: Balance,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
    pub augmentation: AugmentationConfig,
    /// Random crop and colour jitter; otherwise the test-time center crop.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-4,
            lr_halving_epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-10,
            seed: 0,
            checkpoint_every: 0,
            balance: Balance::default(),
            grad_clip: None,
            augmentation: AugmentationConfig::default(),
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_halving_epochs {
            0 => self.lr,
            k => self.lr * 0.5f64.powi((epoch / k) as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("lr and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        self.augmentation.validate()
    }
}

/// One optimizer step as written to the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    /// Balance terms after the step.
    pub balance: Balance,
}

pub const LOG_HEADER: &str =
    "# epoch step total position orientation scene_nll position_centroid_nll orientation_centroid_nll s_x s_q";

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            self.epoch,
            self.step,
            l.total,
            l.position,
            l.orientation,
            l.scene_nll,
            l.position_centroid_nll,
            l.orientation_centroid_nll,
            self.balance.s_x,
            self.balance.s_q
        )
    }
}

/// Where training writes its log lines and checkpoints.
#[derive(Default)]
pub struct TrainSink<'a> {
    pub log: Option<&'a mut dyn Write>,
    pub checkpoint_dir: Option<PathBuf>,
}

pub struct TrainSummary {
    pub steps: Vec<StepRecord>,
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_checkpoint: Option<PathBuf>,
}

fn step_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ ((epoch as u64) << 32) ^ step as u64
}

fn clip_gradients(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<()> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g
                .sqr()?
                .sum_all()?
                .to_dtype(candle_core::DType::F64)?
                .to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(())
}

/// Trains `model` and `loss` jointly with Adam on the train split.
///
/// Scene and centroid selection are teacher-forced with the ground-truth
/// labels; the learning rate follows [`TrainConfig::lr_at`] per epoch.
pub fn train(
    model: &C2fModel,
    loss: &LossParams,
    dataset: &Dataset,
    centroids: &BTreeMap<usize, CentroidSet>,
    cfg: &TrainConfig,
    mut sink: TrainSink<'_>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let table = CentroidTable::new(centroids)?;
    table.check_compatible(model.config())?;
    if dataset.num_scenes() != model.config().num_scenes {
        return Err(Error::Config(format!(
            "dataset has {} scenes, model has {}",
            dataset.num_scenes(),
            model.config().num_scenes
        )));
    }
    let crop = cfg.augmentation.crop as usize;
    let (h, w) = (
        model.config().backbone.input_height,
        model.config().backbone.input_width,
    );
    if (crop, crop) != (h, w) {
        return Err(Error::Config(format!(
            "crop {crop} does not match the {h}x{w} model input"
        )));
    }
    let train_split = dataset.split(Split::Train);
    if train_split.is_empty() {
        return Err(Error::EmptyInput("train split"));
    }
    let set = PreparedSet::load(&train_split.samples, centroids)?;

    let mut vars = model.params().vars();
    vars.extend(loss.vars());
    let mut opt = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: 0.0,
        },
    )?;

    if let Some(log) = sink.log.as_deref_mut() {
        writeln!(log, "{LOG_HEADER}")?;
    }
    if let Some(dir) = &sink.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut steps = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0;
    for epoch in 0..cfg.epochs {
        opt.set_learning_rate(cfg.lr_at(epoch));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut epoch_total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let seed = step_seed(cfg.seed, epoch, global_step);
            let mode = |i: usize| {
                if cfg.augment {
                    AugmentMode::Train {
                        seed: seed ^ (i as u64).wrapping_mul(0x9E37_79B9),
                    }
                } else {
                    AugmentMode::Test
                }
            };
            let images = set.images(model, chunk, &cfg.augmentation, mode)?;
            let target = set.target(chunk);
            let mut opts = ForwardOptions::teacher_forced(
                target.scenes.clone(),
                target.position_centroids.clone(),
                target.orientation_centroids.clone(),
            );
            opts.dropout_seed = seed;
            let out = model.forward(&images, &table, &opts)?;
            let terms = multi_scene_loss(&out, &target, loss)?;
            let breakdown = terms.breakdown()?;
            if !breakdown.total.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite loss at epoch {epoch}, step {global_step}"
                )));
            }
            let mut grads = terms.total.backward()?;
            if let Some(c) = cfg.grad_clip {
                clip_gradients(&mut grads, &vars, c)?;
            }
            opt.step(&grads)?;

            let record = StepRecord {
                epoch,
                step: global_step,
                loss: breakdown,
                balance: loss.balance()?,
            };
            if let Some(log) = sink.log.as_deref_mut() {
                writeln!(log, "{record}")?;
            }
            log::debug!("{record}");
            steps.push(record);
            epoch_total += breakdown.total;
            batches += 1;
            global_step += 1;
        }
        epoch_losses.push(epoch_total / batches as f64);
        log::info!("epoch {epoch}: mean loss {:.5}", epoch_losses[epoch]);

        if let Some(dir) = &sink.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
                let path = dir.join(format!("epoch_{:04}.safetensors", epoch + 1));
                save_checkpoint(&path, model, loss, Some(&table), Some(epoch + 1))?;
            }
        }
    }

    let final_checkpoint = match &sink.checkpoint_dir {
        Some(dir) => {
            let path = dir.join("final.safetensors");
            save_checkpoint(&path, model, loss, Some(&table), Some(cfg.epochs))?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainSummary {
        steps,
        epoch_losses,
        final_checkpoint,
    })
}
