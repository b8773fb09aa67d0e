//! Attention map extraction for interpretation.

use candle_core::{DType, Tensor, D};
use image::{imageops, ImageBuffer, Luma};

use super::layers::to_f64_vec;
use super::{C2fModel, CentroidTable, ForwardOptions};
use crate::error::{Error, Result};

/// Head-averaged encoder self-attention of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderAttention {
    /// `(H_a, W_a)` token grid.
    pub grid: (usize, usize),
    /// One `T x T` row-major matrix per layer.
    pub layers: Vec<Vec<f64>>,
}

/// Everything extracted from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    /// `(H, W)` of the network input.
    pub input_size: (usize, usize),
    pub position_encoder: EncoderAttention,
    pub orientation_encoder: EncoderAttention,
    /// Last-layer cross-attention of each scene query over the position grid.
    pub position_decoder: Vec<Vec<f64>>,
    /// Last-layer cross-attention of each scene query over the orientation grid.
    pub orientation_decoder: Vec<Vec<f64>>,
    /// Per-scene attention concentration in the position decoder: the
    /// negative entropy of each query's cross-attention row, averaged over
    /// heads and summed over layers.
    pub scene_scores: Vec<f64>,
    /// Scenes ordered by decreasing concentration.
    pub ranking: Vec<usize>,
    /// Scene chosen by the scene classifier.
    pub predicted_scene: usize,
}

impl AttentionMaps {
    /// Position decoder map of `scene`, bilinearly upsampled to the input size.
    pub fn upsampled_position(&self, scene: usize) -> Result<Vec<f64>> {
        let map = self.position_decoder.get(scene).ok_or(Error::IndexOutOfRange {
            index: scene,
            len: self.position_decoder.len(),
        })?;
        upsample_bilinear(map, self.position_encoder.grid, self.input_size)
    }

    pub fn upsampled_orientation(&self, scene: usize) -> Result<Vec<f64>> {
        let map = self.orientation_decoder.get(scene).ok_or(Error::IndexOutOfRange {
            index: scene,
            len: self.orientation_decoder.len(),
        })?;
        upsample_bilinear(map, self.orientation_encoder.grid, self.input_size)
    }
}

/// Bilinear resize of a row-major `from.0 x from.1` map.
pub fn upsample_bilinear(map: &[f64], from: (usize, usize), to: (usize, usize)) -> Result<Vec<f64>> {
    if map.len() != from.0 * from.1 {
        return Err(Error::Config(format!(
            "map has {} values, expected {}x{}",
            map.len(),
            from.0,
            from.1
        )));
    }
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(from.1 as u32, from.0 as u32, map.iter().map(|&v| v as f32).collect())
            .ok_or(Error::EmptyInput("attention map"))?;
    let out = imageops::resize(&buf, to.1 as u32, to.0 as u32, imageops::FilterType::Triangle);
    Ok(out.into_raw().into_iter().map(f64::from).collect())
}

/// `B x H x Tq x Tk` to one head-averaged `Tq x Tk` matrix per batch item.
fn head_average(weights: &Tensor) -> Result<Vec<Vec<f64>>> {
    let avg = weights.mean(1)?;
    let b = avg.dim(0)?;
    (0..b).map(|i| to_f64_vec(&avg.get(i)?)).collect()
}

/// `sum_layers mean_heads sum_j p_j ln p_j` per batch item and query, from
/// `B x H x Tq x Tk` weights. `None` for an empty stack.
fn position_concentration(layers: &[Tensor]) -> Result<Option<Vec<Vec<f64>>>> {
    let mut total: Option<Tensor> = None;
    for w in layers {
        let w = w.to_dtype(DType::F64)?;
        let plogp = (&w * w.clamp(1e-300, 1.0)?.log()?)?.sum(D::Minus1)?.mean(1)?;
        total = Some(match total {
            Some(t) => (t + plogp)?,
            None => plogp,
        });
    }
    total
        .map(|t| (0..t.dim(0)?).map(|b| to_f64_vec(&t.get(b)?)).collect())
        .transpose()
}

fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

impl C2fModel {
    /// Runs inference on a batch and returns the attention maps per image.
    pub fn extract_attention(&self, images: &Tensor, centroids: &CentroidTable) -> Result<Vec<AttentionMaps>> {
        let opts = ForwardOptions {
            record_attention: true,
            ..ForwardOptions::infer()
        };
        let out = self.forward(images, centroids, &opts)?;
        let trace = out.trace.as_ref().expect("trace was requested");
        let (_, h, w) = self.backbone.input_shape();
        let n = self.config.num_scenes;
        let batch = out.batch_size();

        let per_layer = |trace: &[Tensor]| -> Result<Vec<Vec<Vec<f64>>>> { trace.iter().map(head_average).collect() };
        let enc_x = per_layer(&trace.position.encoder.weights)?;
        let enc_q = per_layer(&trace.orientation.encoder.weights)?;
        let dec_x = trace.position.decoder.weights.last().map(head_average).transpose()?;
        let dec_q = trace.orientation.decoder.weights.last().map(head_average).transpose()?;
        let concentration = position_concentration(&trace.position.decoder.weights)?;
        let split = |rows: &[f64], t: usize| rows.chunks_exact(t).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let tx = trace.position.grid.0 * trace.position.grid.1;
        let tq = trace.orientation.grid.0 * trace.orientation.grid.1;

        (0..batch)
            .map(|b| {
                let scene_scores = concentration.as_ref().map_or_else(|| vec![0.0; n], |m| m[b].clone());
                Ok(AttentionMaps {
                    input_size: (h, w),
                    position_encoder: EncoderAttention {
                        grid: trace.position.grid,
                        layers: enc_x.iter().map(|l| l[b].clone()).collect(),
                    },
                    orientation_encoder: EncoderAttention {
                        grid: trace.orientation.grid,
                        layers: enc_q.iter().map(|l| l[b].clone()).collect(),
                    },
                    position_decoder: dec_x.as_ref().map_or_else(Vec::new, |d| split(&d[b], tx)),
                    orientation_decoder: dec_q.as_ref().map_or_else(Vec::new, |d| split(&d[b], tq)),
                    ranking: rank_descending(&scene_scores),
                    scene_scores,
                    predicted_scene: out.selected_scenes[b],
                })
            })
            .collect()
    }
}
