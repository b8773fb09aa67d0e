//! The coarse-to-fine multi-scene pose regressor.
//!
//! A shared backbone is tapped twice. Each tap is turned into a token
//! sequence, encoded by its own transformer encoder and decoded against one
//! learned query per scene. The fused decoder outputs pick the scene; the
//! selected scene's embeddings then pick a position and an orientation
//! centroid and regress residuals on top of them.

mod attention;
mod backbone;
mod checkpoint;
mod config;
mod encoding;
mod heads;
mod layers;
mod params;
mod transformer;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use sha2::{Digest, Sha256};

pub use attention::{upsample_bilinear, AttentionMaps, EncoderAttention};
pub use backbone::{ActivationMap, Backbone, Branch, ReferenceBackbone};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use config::{BackboneSpec, ConvStage, ModelConfig};
pub use encoding::{prepare_sequence, PositionalEncodingTable, TokenSequence};
pub use heads::{fuse_and_classify_scene, select_scene, CentroidClassifiers, ResidualHeads, SceneClassifier};
pub use layers::{
    log_softmax, select_rows, to_f64_vec, AttentionOutput, Ctx, LayerNorm, Linear, Mlp, MultiHeadAttention,
};
pub use params::{Init, ParamStore};
pub use transformer::{AttentionTrace, DecoderStack, EncoderStack};

use crate::clustering::{centroids_to_string, CentroidSet};
use crate::error::{Error, Result};
use crate::pose::{Pose, Quaternion};

/// Projection, positional table, encoder, decoder and scene queries of one
/// branch.
pub struct BranchModule {
    pub proj: Linear,
    pub pos_embed: PositionalEncodingTable,
    pub encoder: EncoderStack,
    pub decoder: DecoderStack,
    /// `N x C_d`, row `i` queries scene `i`.
    pub queries: Tensor,
}

impl BranchModule {
    fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, tap: (usize, usize, usize)) -> Result<Self> {
        let (h, w, c) = tap;
        let d = cfg.token_dim;
        Ok(Self {
            proj: Linear::new(store, &format!("{prefix}.proj"), c, d)?,
            pos_embed: PositionalEncodingTable::new(store, &format!("{prefix}.pos_embed"), h, w, d)?,
            encoder: EncoderStack::new(
                store,
                &format!("{prefix}.encoder"),
                cfg.layers,
                d,
                cfg.heads,
                cfg.mlp_dim,
            )?,
            decoder: DecoderStack::new(
                store,
                &format!("{prefix}.decoder"),
                cfg.layers,
                d,
                cfg.heads,
                cfg.mlp_dim,
            )?,
            queries: store.param(&format!("{prefix}.queries"), &[cfg.num_scenes, d], Init::Normal(0.02))?,
        })
    }

    fn run(
        &self,
        map: &ActivationMap,
        num_scenes: usize,
        ctx: &Ctx,
        trace: Option<&mut BranchTrace>,
    ) -> Result<Tensor> {
        let seq = prepare_sequence(map, &self.proj, &self.pos_embed)?;
        match trace {
            Some(t) => {
                t.grid = (seq.height, seq.width);
                let memory = self.encoder.encode(&seq, ctx, Some(&mut t.encoder))?;
                self.decoder
                    .decode(&memory, &self.queries, num_scenes, ctx, Some(&mut t.decoder))
            }
            None => {
                let memory = self.encoder.encode(&seq, ctx, None)?;
                self.decoder.decode(&memory, &self.queries, num_scenes, ctx, None)
            }
        }
    }
}

/// Attention recorded for one branch during a forward pass.
#[derive(Clone, Default)]
pub struct BranchTrace {
    /// `(H_a, W_a)` of the branch's token grid.
    pub grid: (usize, usize),
    /// Encoder self-attention per layer.
    pub encoder: AttentionTrace,
    /// Decoder cross-attention per layer.
    pub decoder: AttentionTrace,
}

#[derive(Clone, Default)]
pub struct ForwardTrace {
    pub position: BranchTrace,
    pub orientation: BranchTrace,
}

/// Dense per-scene centroid lookup validated against a model config.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    pub num_scenes: usize,
    pub k_x: usize,
    pub k_q: usize,
    pub seed: u64,
    /// SHA-256 of the serialized centroid sets.
    pub fingerprint: String,
    positions: Vec<[f64; 3]>,
    orientations: Vec<Quaternion>,
}

impl CentroidTable {
    /// Requires scenes `0..N` with a common `K_x` and `K_q`.
    pub fn new(sets: &BTreeMap<usize, CentroidSet>) -> Result<Self> {
        let first = sets.values().next().ok_or(Error::EmptyInput("no centroid sets"))?;
        let (k_x, k_q, seed) = (first.k_x(), first.k_q(), first.seed);
        let mut positions = Vec::new();
        let mut orientations = Vec::new();
        for scene in 0..sets.len() {
            let set = sets.get(&scene).ok_or(Error::MissingCentroids(scene))?;
            if set.k_x() != k_x || set.k_q() != k_q {
                return Err(Error::Config(format!(
                    "scene {scene} has K_x={}, K_q={}; expected {k_x}, {k_q}",
                    set.k_x(),
                    set.k_q()
                )));
            }
            positions.extend_from_slice(&set.position_centroids);
            orientations.extend_from_slice(&set.orientation_centroids);
        }
        let fingerprint = hex::encode(Sha256::digest(centroids_to_string(sets).as_bytes()));
        Ok(Self {
            num_scenes: sets.len(),
            k_x,
            k_q,
            seed,
            fingerprint,
            positions,
            orientations,
        })
    }

    /// Origin positions and identity orientations, for timing and shape checks.
    pub fn placeholder(num_scenes: usize, k_x: usize, k_q: usize) -> Self {
        Self {
            num_scenes,
            k_x,
            k_q,
            seed: 0,
            fingerprint: String::new(),
            positions: vec![[0.0; 3]; num_scenes * k_x],
            orientations: vec![Quaternion::IDENTITY; num_scenes * k_q],
        }
    }

    pub fn position(&self, scene: usize, k: usize) -> [f64; 3] {
        self.positions[scene * self.k_x + k]
    }

    pub fn orientation(&self, scene: usize, k: usize) -> Quaternion {
        self.orientations[scene * self.k_q + k]
    }

    pub fn check_compatible(&self, cfg: &ModelConfig) -> Result<()> {
        if (self.num_scenes, self.k_x, self.k_q) != (cfg.num_scenes, cfg.k_x, cfg.k_q) {
            return Err(Error::Config(format!(
                "centroids cover {} scenes with K_x={}, K_q={} but the model expects {}, {}, {}",
                self.num_scenes, self.k_x, self.k_q, cfg.num_scenes, cfg.k_x, cfg.k_q
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; forced indices route the selection.
    Train,
    Infer,
}

/// Routing and recording options for [`C2fModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Ground-truth scene per batch item (teacher forcing).
    pub scenes: Option<Vec<usize>>,
    pub position_centroids: Option<Vec<usize>>,
    pub orientation_centroids: Option<Vec<usize>>,
    /// When false the residual heads are skipped and the pose is the
    /// selected centroid.
    pub residuals: bool,
    pub record_attention: bool,
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn infer() -> Self {
        Self {
            mode: Mode::Infer,
            scenes: None,
            position_centroids: None,
            orientation_centroids: None,
            residuals: true,
            record_attention: false,
            dropout_seed: 0,
        }
    }

    pub fn teacher_forced(
        scenes: Vec<usize>,
        position_centroids: Vec<usize>,
        orientation_centroids: Vec<usize>,
    ) -> Self {
        Self {
            mode: Mode::Train,
            scenes: Some(scenes),
            position_centroids: Some(position_centroids),
            orientation_centroids: Some(orientation_centroids),
            ..Self::infer()
        }
    }
}

pub struct ModelOutput {
    /// `B x N`
    pub scene_log_probs: Tensor,
    /// `B x N x C_d`
    pub position_embeddings: Tensor,
    /// `B x N x C_d`
    pub orientation_embeddings: Tensor,
    /// `B x N x 2C_d`
    pub fused: Tensor,
    pub selected_scenes: Vec<usize>,
    /// `B x K_x`
    pub position_centroid_log_probs: Tensor,
    /// `B x K_q`
    pub orientation_centroid_log_probs: Tensor,
    pub selected_position_centroids: Vec<usize>,
    pub selected_orientation_centroids: Vec<usize>,
    /// `B x 3`
    pub position_residual: Tensor,
    /// `B x 4`
    pub orientation_residual: Tensor,
    /// Selected position centroid plus residual, `B x 3`.
    pub position: Tensor,
    /// Selected orientation centroid plus residual (unnormalized), `B x 4`.
    pub orientation: Tensor,
    pub trace: Option<ForwardTrace>,
}

impl ModelOutput {
    pub fn batch_size(&self) -> usize {
        self.selected_scenes.len()
    }

    /// Final poses with the orientation normalized to unit canonical form.
    pub fn poses(&self) -> Result<Vec<Pose>> {
        let x = to_f64_vec(&self.position)?;
        let q = to_f64_vec(&self.orientation)?;
        x.chunks_exact(3)
            .zip(q.chunks_exact(4))
            .map(|(x, q)| Pose::new([x[0], x[1], x[2]], Quaternion::new(q[0], q[1], q[2], q[3])))
            .collect()
    }
}

pub struct C2fModel {
    config: ModelConfig,
    store: ParamStore,
    backbone: Box<dyn Backbone>,
    pub position: BranchModule,
    pub orientation: BranchModule,
    pub scene_classifier: SceneClassifier,
    pub centroid_classifiers: CentroidClassifiers,
    pub residual_heads: ResidualHeads,
}

impl C2fModel {
    /// Builds a freshly initialized model with the reference backbone.
    pub fn new(config: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let backbone = ReferenceBackbone::new(&mut store, &config.backbone)?;
        let position = BranchModule::new(&mut store, "position", config, config.backbone.position_shape())?;
        let orientation = BranchModule::new(&mut store, "orientation", config, config.backbone.orientation_shape())?;
        let scene_classifier = SceneClassifier::new(&mut store, config.token_dim)?;
        let centroid_classifiers = CentroidClassifiers::new(&mut store, config.token_dim, config.k_x, config.k_q)?;
        let residual_heads = ResidualHeads::new(&mut store, config.token_dim, config.head_hidden)?;
        Ok(Self {
            config: config.clone(),
            store,
            backbone: Box::new(backbone),
            position,
            orientation,
            scene_classifier,
            centroid_classifiers,
            residual_heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// Runs the backbone on a `B x C x H x W` batch.
    pub fn backbone_forward(&self, images: &Tensor) -> Result<(ActivationMap, ActivationMap)> {
        self.backbone.forward(&images.to_dtype(self.dtype())?)
    }

    /// Stacks channel-major images into a batch tensor of the model dtype.
    pub fn batch_images(&self, images: &[&[f32]]) -> Result<Tensor> {
        let (c, h, w) = self.backbone.input_shape();
        let mut flat = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if img.len() != c * h * w {
                return Err(Error::Config(format!(
                    "image has {} values, expected {c}x{h}x{w}",
                    img.len()
                )));
            }
            flat.extend_from_slice(img);
        }
        Ok(Tensor::from_vec(flat, (images.len(), c, h, w), self.device())?.to_dtype(self.dtype())?)
    }

    pub fn forward(&self, images: &Tensor, centroids: &CentroidTable, opts: &ForwardOptions) -> Result<ModelOutput> {
        centroids.check_compatible(&self.config)?;
        let cfg = &self.config;
        let ctx = match opts.mode {
            Mode::Train => Ctx::train(cfg.dropout, opts.dropout_seed),
            Mode::Infer => Ctx::infer(),
        };
        let (a_x, a_q) = self.backbone_forward(images)?;
        let batch = a_x.tensor.dim(0)?;

        let mut trace = opts.record_attention.then(ForwardTrace::default);
        let (tx, tq) = match trace.as_mut() {
            Some(t) => (Some(&mut t.position), Some(&mut t.orientation)),
            None => (None, None),
        };
        let x_all = self.position.run(&a_x, cfg.num_scenes, &ctx, tx)?;
        let q_all = self.orientation.run(&a_q, cfg.num_scenes, &ctx, tq)?;

        let (fused, scene_log_probs) = fuse_and_classify_scene(&x_all, &q_all, &self.scene_classifier)?;
        let scene_lp = to_f64_vec(&scene_log_probs)?;
        let selected_scenes = select_per_row(&scene_lp, cfg.num_scenes, batch, opts.scenes.as_deref())?;

        let x_sel = select_rows(&x_all, &selected_scenes)?;
        let q_sel = select_rows(&q_all, &selected_scenes)?;
        let (cx, cq) = self.centroid_classifiers.classify(&x_sel, &q_sel)?;
        let selected_position_centroids =
            select_per_row(&to_f64_vec(&cx)?, cfg.k_x, batch, opts.position_centroids.as_deref())?;
        let selected_orientation_centroids =
            select_per_row(&to_f64_vec(&cq)?, cfg.k_q, batch, opts.orientation_centroids.as_deref())?;

        let (dx, dq) = if opts.residuals {
            self.residual_heads.regress(&x_sel, &q_sel, &ctx)?
        } else {
            (
                Tensor::zeros((batch, 3), self.dtype(), self.device())?,
                Tensor::zeros((batch, 4), self.dtype(), self.device())?,
            )
        };

        let mut cx_vals = Vec::with_capacity(batch * 3);
        let mut cq_vals = Vec::with_capacity(batch * 4);
        for b in 0..batch {
            let s = selected_scenes[b];
            cx_vals.extend(centroids.position(s, selected_position_centroids[b]));
            cq_vals.extend(centroids.orientation(s, selected_orientation_centroids[b]).to_array());
        }
        let c_x = Tensor::from_vec(cx_vals, (batch, 3), self.device())?.to_dtype(self.dtype())?;
        let c_q = Tensor::from_vec(cq_vals, (batch, 4), self.device())?.to_dtype(self.dtype())?;

        Ok(ModelOutput {
            scene_log_probs,
            position_embeddings: x_all,
            orientation_embeddings: q_all,
            fused,
            selected_scenes,
            position_centroid_log_probs: cx,
            orientation_centroid_log_probs: cq,
            selected_position_centroids,
            selected_orientation_centroids,
            position: (&c_x + &dx)?,
            orientation: (&c_q + &dq)?,
            position_residual: dx,
            orientation_residual: dq,
            trace,
        })
    }
}

/// Row-wise selection over a flattened `batch x classes` score matrix.
fn select_per_row(scores: &[f64], classes: usize, batch: usize, forced: Option<&[usize]>) -> Result<Vec<usize>> {
    if let Some(f) = forced {
        if f.len() != batch {
            return Err(Error::Config(format!(
                "{} forced indices for a batch of {batch}",
                f.len()
            )));
        }
    }
    scores
        .chunks_exact(classes)
        .enumerate()
        .map(|(b, row)| select_scene(row, forced.map(|f| f[b])))
        .collect()
}
