use candle_core::Tensor;

use super::config::BackboneSpec;
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Position,
    Orientation,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Position => "position",
            Branch::Orientation => "orientation",
        }
    }
}

/// Backbone features for one branch, `B x C_a x H_a x W_a`.
#[derive(Debug, Clone)]
pub struct ActivationMap {
    pub branch: Branch,
    pub tensor: Tensor,
}

impl ActivationMap {
    pub fn height(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[3]
    }

    pub fn channels(&self) -> usize {
        self.tensor.dims()[1]
    }
}

/// Anything that turns a batch of `B x C x H x W` images into the
/// position- and orientation-branch activation maps.
pub trait Backbone: Send + Sync {
    fn forward(&self, images: &Tensor) -> Result<(ActivationMap, ActivationMap)>;

    /// `(channels, height, width)` the backbone accepts.
    fn input_shape(&self) -> (usize, usize, usize);
}

/// Strided 3x3 convolutions with GELU, tapped at two stages.
pub struct ReferenceBackbone {
    spec: BackboneSpec,
    convs: Vec<(Tensor, Tensor, usize)>,
}

impl ReferenceBackbone {
    pub fn new(store: &mut ParamStore, spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let mut c_in = spec.input_channels;
        let mut convs = Vec::with_capacity(spec.stages.len());
        for (i, stage) in spec.stages.iter().enumerate() {
            let init = Init::Xavier {
                fan_in: c_in * 9,
                fan_out: stage.channels * 9,
            };
            let w = store.param(&format!("backbone.conv{i}.weight"), &[stage.channels, c_in, 3, 3], init)?;
            let b = store.param(&format!("backbone.conv{i}.bias"), &[stage.channels], Init::Zeros)?;
            convs.push((w, b, stage.stride));
            c_in = stage.channels;
        }
        Ok(Self {
            spec: spec.clone(),
            convs,
        })
    }
}

impl Backbone for ReferenceBackbone {
    fn forward(&self, images: &Tensor) -> Result<(ActivationMap, ActivationMap)> {
        let dims = images.dims();
        let expected = self.input_shape();
        if dims.len() != 4 || (dims[1], dims[2], dims[3]) != expected {
            return Err(Error::Config(format!(
                "backbone expects B x {} x {} x {} images, got {dims:?}",
                expected.0, expected.1, expected.2
            )));
        }
        let mut x = images.clone();
        let mut position = None;
        let mut orientation = None;
        let last = self.spec.position_tap.max(self.spec.orientation_tap);
        for (i, (w, b, stride)) in self.convs.iter().enumerate().take(last + 1) {
            x = x
                .conv2d(w, 1, *stride, 1, 1)?
                .broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?
                .gelu_erf()?;
            if i == self.spec.position_tap {
                position = Some(x.clone());
            }
            if i == self.spec.orientation_tap {
                orientation = Some(x.clone());
            }
        }
        Ok((
            ActivationMap {
                branch: Branch::Position,
                tensor: position.expect("position tap reached"),
            },
            ActivationMap {
                branch: Branch::Orientation,
                tensor: orientation.expect("orientation tap reached"),
            },
        ))
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.spec.input_channels, self.spec.input_height, self.spec.input_width)
    }
}
