//! Scene selection, centroid classification and residual regression heads.

use candle_core::{Tensor, D};

use super::layers::{log_softmax, Ctx, Linear, Mlp};
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

const CLASSIFIER_INIT: Init = Init::Normal(0.01);

/// Scores every fused `[X_i, Q_i]` row with one shared affine map and
/// normalizes across scenes.
#[derive(Clone)]
pub struct SceneClassifier {
    pub fc: Linear,
}

impl SceneClassifier {
    pub fn new(store: &mut ParamStore, token_dim: usize) -> Result<Self> {
        Ok(Self {
            fc: Linear::with_init(store, "scene_classifier", 2 * token_dim, 1, CLASSIFIER_INIT)?,
        })
    }
}

/// Concatenates the two decoder outputs per scene and classifies the scene.
///
/// Returns `(Z_fused: B x N x 2C_d, scene log-probs: B x N)`.
pub fn fuse_and_classify_scene(x: &Tensor, q: &Tensor, classifier: &SceneClassifier) -> Result<(Tensor, Tensor)> {
    if x.dims() != q.dims() {
        return Err(Error::Config(format!(
            "decoder outputs disagree: {:?} vs {:?}",
            x.dims(),
            q.dims()
        )));
    }
    let fused = Tensor::cat(&[x, q], D::Minus1)?;
    let logits = classifier.fc.forward(&fused)?.squeeze(D::Minus1)?;
    Ok((fused, log_softmax(&logits)?))
}

/// Argmax with lowest-index ties, or the forced index when given.
pub fn select_scene(log_probs: &[f64], forced: Option<usize>) -> Result<usize> {
    if let Some(i) = forced {
        if i >= log_probs.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: log_probs.len(),
            });
        }
        return Ok(i);
    }
    argmax(log_probs).ok_or(Error::EmptyInput("argmax of no scores"))
}

pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Position and orientation centroid classifiers, applied to the selected
/// scene's `X` and `Q` embeddings respectively.
#[derive(Clone)]
pub struct CentroidClassifiers {
    pub position: Linear,
    pub orientation: Linear,
}

impl CentroidClassifiers {
    pub fn new(store: &mut ParamStore, token_dim: usize, k_x: usize, k_q: usize) -> Result<Self> {
        Ok(Self {
            position: Linear::with_init(store, "centroid_classifier.position", token_dim, k_x, CLASSIFIER_INIT)?,
            orientation: Linear::with_init(
                store,
                "centroid_classifier.orientation",
                token_dim,
                k_q,
                CLASSIFIER_INIT,
            )?,
        })
    }

    /// `(c_x: B x K_x, c_q: B x K_q)` log-probabilities.
    pub fn classify(&self, x_sel: &Tensor, q_sel: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((
            log_softmax(&self.position.forward(x_sel)?)?,
            log_softmax(&self.orientation.forward(q_sel)?)?,
        ))
    }
}

/// Single-hidden-layer GELU heads regressing `dx` (3) and `dq` (4).
#[derive(Clone)]
pub struct ResidualHeads {
    pub position: Mlp,
    pub orientation: Mlp,
}

impl ResidualHeads {
    pub fn new(store: &mut ParamStore, token_dim: usize, hidden: usize) -> Result<Self> {
        let mut head = |prefix: &str, d_out: usize| -> Result<Mlp> {
            Ok(Mlp {
                fc1: Linear::new(store, &format!("{prefix}.fc1"), token_dim, hidden)?,
                // Zero output weights: training starts from the centroid estimate.
                fc2: Linear::with_init(store, &format!("{prefix}.fc2"), hidden, d_out, Init::Zeros)?,
            })
        };
        Ok(Self {
            position: head("residual.position", 3)?,
            orientation: head("residual.orientation", 4)?,
        })
    }

    pub fn regress(&self, x_sel: &Tensor, q_sel: &Tensor, ctx: &Ctx) -> Result<(Tensor, Tensor)> {
        Ok((
            self.position.forward(x_sel, ctx)?,
            self.orientation.forward(q_sel, ctx)?,
        ))
    }
}
