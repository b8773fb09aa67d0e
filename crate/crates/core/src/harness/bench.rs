use std::fmt::Write as _;
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{C2fModel, CentroidTable, ForwardOptions, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub num_scenes: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub num_params: usize,
    pub param_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub trials: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            trials: 10,
            warmup: 2,
            batch_size: 1,
            seed: 0,
        }
    }
}

/// Times untrained inference for each scene count, keeping everything else
/// in `template` fixed.
pub fn bench_scaling(template: &ModelConfig, scene_counts: &[usize], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if opts.trials == 0 || opts.batch_size == 0 {
        return Err(Error::Config("trials and batch_size must be >= 1".into()));
    }
    let spec = &template.backbone;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_px = opts.batch_size * spec.input_channels * spec.input_height * spec.input_width;
    let pixels: Vec<f32> = (0..n_px).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let mut rows = Vec::with_capacity(scene_counts.len());
    for &n in scene_counts {
        if n == 0 {
            return Err(Error::Config("scene counts must be >= 1".into()));
        }
        let cfg = ModelConfig {
            num_scenes: n,
            ..template.clone()
        };
        let model = C2fModel::new(&cfg, DType::F32, opts.seed)?;
        let table = CentroidTable::placeholder(n, cfg.k_x, cfg.k_q);
        let images = Tensor::from_slice(
            &pixels,
            (
                opts.batch_size,
                spec.input_channels,
                spec.input_height,
                spec.input_width,
            ),
            model.device(),
        )?;
        let fwd = ForwardOptions::infer();
        for _ in 0..opts.warmup {
            model.forward(&images, &table, &fwd)?;
        }
        let mut times = Vec::with_capacity(opts.trials);
        for _ in 0..opts.trials {
            let t = Instant::now();
            model.forward(&images, &table, &fwd)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let row = BenchRow {
            num_scenes: n,
            mean_ms: times.iter().sum::<f64>() / times.len() as f64,
            min_ms: times.iter().cloned().fold(f64::INFINITY, f64::min),
            num_params: model.num_params(),
            param_bytes: model.params().num_bytes(),
        };
        log::info!("N={n}: {:.2} ms, {} params", row.mean_ms, row.num_params);
        rows.push(row);
    }
    Ok(rows)
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("num_scenes,mean_ms,min_ms,num_params,param_bytes\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.4},{:.4},{},{}",
            r.num_scenes, r.mean_ms, r.min_ms, r.num_params, r.param_bytes
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneSpec;

    #[test]
    fn one_row_per_scene_count() {
        let cfg = ModelConfig {
            token_dim: 16,
            layers: 1,
            heads: 2,
            mlp_dim: 16,
            head_hidden: 8,
            backbone: BackboneSpec::tiny_64(),
            ..ModelConfig::default()
        };
        let opts = BenchOptions {
            trials: 1,
            warmup: 0,
            ..BenchOptions::default()
        };
        let rows = bench_scaling(&cfg, &[1, 5, 2], &opts).unwrap();
        assert_eq!(rows.iter().map(|r| r.num_scenes).collect::<Vec<_>>(), vec![1, 5, 2]);
        assert!(rows[1].num_params > rows[0].num_params);
        assert_eq!(rows[0].param_bytes, 4 * rows[0].num_params);
        let csv = bench_to_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(bench_scaling(&cfg, &[0], &opts).is_err());
    }
}
