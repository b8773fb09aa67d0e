use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One 3x3 convolution (padding 1) followed by GELU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub channels: usize,
    pub stride: usize,
}

/// Layout of the reference convolutional backbone and its two tap points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub stages: Vec<ConvStage>,
    /// Stage whose output feeds the position branch.
    pub position_tap: usize,
    /// Stage whose output feeds the orientation branch.
    pub orientation_tap: usize,
}

impl BackboneSpec {
    /// 224x224x3 input; taps at 14x14x112 (position) and 28x28x40 (orientation).
    pub fn reference_224() -> Self {
        Self {
            input_height: 224,
            input_width: 224,
            input_channels: 3,
            stages: vec![
                ConvStage {
                    channels: 16,
                    stride: 2,
                },
                ConvStage {
                    channels: 24,
                    stride: 2,
                },
                ConvStage {
                    channels: 40,
                    stride: 2,
                },
                ConvStage {
                    channels: 112,
                    stride: 2,
                },
            ],
            position_tap: 3,
            orientation_tap: 2,
        }
    }

    /// 64x64x3 input; taps at 4x4x32 (position) and 8x8x16 (orientation).
    pub fn tiny_64() -> Self {
        Self {
            input_height: 64,
            input_width: 64,
            input_channels: 3,
            stages: vec![
                ConvStage { channels: 8, stride: 2 },
                ConvStage {
                    channels: 12,
                    stride: 2,
                },
                ConvStage {
                    channels: 16,
                    stride: 2,
                },
                ConvStage {
                    channels: 32,
                    stride: 2,
                },
            ],
            position_tap: 3,
            orientation_tap: 2,
        }
    }

    /// `(height, width, channels)` after every stage.
    pub fn stage_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        self.stages
            .iter()
            .map(|s| {
                h = (h + 2 - 3) / s.stride + 1;
                w = (w + 2 - 3) / s.stride + 1;
                (h, w, s.channels)
            })
            .collect()
    }

    pub fn position_shape(&self) -> (usize, usize, usize) {
        self.stage_shapes()[self.position_tap]
    }

    pub fn orientation_shape(&self) -> (usize, usize, usize) {
        self.stage_shapes()[self.orientation_tap]
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        if self.position_tap >= self.stages.len() || self.orientation_tap >= self.stages.len() {
            return Err(Error::Config("backbone tap index out of range".into()));
        }
        if self.input_height < 3 || self.input_width < 3 || self.input_channels == 0 {
            return Err(Error::Config("backbone input too small".into()));
        }
        if self.stages.iter().any(|s| s.stride == 0 || s.channels == 0) {
            return Err(Error::Config("backbone stages need nonzero stride and channels".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_scenes: usize,
    /// Transformer width `C_d`.
    pub token_dim: usize,
    /// Encoder and decoder depth `L`.
    pub layers: usize,
    pub heads: usize,
    /// Hidden width of the transformer MLPs `C_h`.
    pub mlp_dim: usize,
    pub dropout: f64,
    pub k_x: usize,
    pub k_q: usize,
    /// Hidden width of the residual regression heads.
    pub head_hidden: usize,
    pub backbone: BackboneSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_scenes: 1,
            token_dim: 256,
            layers: 6,
            heads: 4,
            mlp_dim: 256,
            dropout: 0.1,
            k_x: 1,
            k_q: 1,
            head_hidden: 1024,
            backbone: BackboneSpec::reference_224(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.token_dim == 0 || !self.token_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "token_dim must be even and positive, got {}",
                self.token_dim
            )));
        }
        if self.heads == 0 || !self.token_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide token_dim {}",
                self.heads, self.token_dim
            )));
        }
        if self.num_scenes == 0 {
            return Err(Error::Config("num_scenes must be >= 1".into()));
        }
        if self.k_x == 0 || self.k_q == 0 {
            return Err(Error::Config("K_x and K_q must be >= 1".into()));
        }
        if self.mlp_dim == 0 || self.head_hidden == 0 {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_tap_shapes() {
        let b = BackboneSpec::reference_224();
        assert_eq!(b.position_shape(), (14, 14, 112));
        assert_eq!(b.orientation_shape(), (28, 28, 40));
        let t = BackboneSpec::tiny_64();
        assert_eq!(t.position_shape(), (4, 4, 32));
        assert_eq!(t.orientation_shape(), (8, 8, 16));
    }

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = ModelConfig::default();
        assert_eq!((c.token_dim, c.layers, c.heads, c.head_hidden), (256, 6, 4, 1024));
        assert_eq!(c.mlp_dim, c.token_dim);
        assert_eq!(c.dropout, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let odd = ModelConfig {
            token_dim: 15,
            heads: 1,
            ..Default::default()
        };
        assert!(odd.validate().is_err());
        let heads = ModelConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(heads.validate().is_err());
        let none = ModelConfig {
            num_scenes: 0,
            ..Default::default()
        };
        assert!(none.validate().is_err());
    }
}
