use std::collections::BTreeMap;

use candle_core::Tensor;
use image::RgbImage;

use crate::clustering::{assign_labels, CentroidLabels, CentroidSet};
use crate::data::{augment, AugmentMode, AugmentationConfig, LabeledSample};
use crate::error::Result;
use crate::loss::SupervisionTarget;
use crate::model::C2fModel;

/// Decoded images with their centroid labels, kept in memory across epochs.
pub struct PreparedSet {
    pub samples: Vec<LabeledSample>,
    pub images: Vec<RgbImage>,
    pub labels: Vec<CentroidLabels>,
}

impl PreparedSet {
    pub fn load(samples: &[LabeledSample], sets: &BTreeMap<usize, CentroidSet>) -> Result<Self> {
        let labels = assign_labels(samples, sets)?;
        let images = samples
            .iter()
            .map(|s| Ok(image::open(&s.image)?.to_rgb8()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples: samples.to_vec(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn target(&self, indices: &[usize]) -> SupervisionTarget {
        SupervisionTarget {
            positions: indices.iter().map(|&i| self.samples[i].pose.position).collect(),
            orientations: indices.iter().map(|&i| self.samples[i].pose.orientation).collect(),
            scenes: indices.iter().map(|&i| self.samples[i].scene_id).collect(),
            position_centroids: indices.iter().map(|&i| self.labels[i].position).collect(),
            orientation_centroids: indices.iter().map(|&i| self.labels[i].orientation).collect(),
        }
    }

    /// Augments the selected images and stacks them into a model batch.
    pub fn images(
        &self,
        model: &C2fModel,
        indices: &[usize],
        cfg: &AugmentationConfig,
        mode: impl Fn(usize) -> AugmentMode,
    ) -> Result<Tensor> {
        let tensors = indices
            .iter()
            .map(|&i| augment(&self.images[i], cfg, mode(i)))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<&[f32]> = tensors.iter().map(|t| t.data.as_slice()).collect();
        model.batch_images(&views)
    }
}
