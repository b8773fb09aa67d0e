//! Checkpoints: every parameter plus the loss balance terms in one
//! safetensors file, with the model config and centroid fingerprint in the
//! header metadata.

use std::collections::HashMap;
use std::path::Path;

use candle_core::safetensors::Load;
use candle_core::{DType, Tensor};
use safetensors::SafeTensors;

use super::{C2fModel, CentroidTable, ModelConfig};
use crate::error::{Error, Result};
use crate::loss::{Balance, LossParams};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "c2f-checkpoint";
const S_X: &str = "loss.s_x";
const S_Q: &str = "loss.s_q";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: ModelConfig,
    pub centroid_seed: Option<u64>,
    /// SHA-256 of the centroid file the model was trained against.
    pub centroid_hash: Option<String>,
    pub epoch: Option<usize>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &C2fModel,
    loss: &LossParams,
    centroids: Option<&CentroidTable>,
    epoch: Option<usize>,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|(name, var)| (name.to_string(), var.as_tensor().clone()))
        .collect();
    tensors.push((S_X.into(), loss.s_x.as_tensor().clone()));
    tensors.push((S_Q.into(), loss.s_q.as_tensor().clone()));

    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT.to_string());
    meta.insert("version".to_string(), CHECKPOINT_VERSION.to_string());
    meta.insert(
        "config".to_string(),
        serde_json::to_string(model.config()).map_err(|e| Error::Checkpoint(e.to_string()))?,
    );
    if let Some(c) = centroids {
        meta.insert("centroid_seed".to_string(), c.seed.to_string());
        meta.insert("centroid_hash".to_string(), c.fingerprint.clone());
    }
    if let Some(e) = epoch {
        meta.insert("epoch".to_string(), e.to_string());
    }
    safetensors::serialize_to_file(tensors, Some(meta), path.as_ref())
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.as_ref().display())))
}

/// Rebuilds the model and loss parameters stored at `path`.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(C2fModel, LossParams, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let ck = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(ck)?;
    let meta = header
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no metadata", path.display())))?;
    let field = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing `{k}`", path.display())))
    };
    if field("format")? != FORMAT {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint", path.display())));
    }
    let version: u32 = field("version")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig = serde_json::from_str(field("config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let parse_opt = |k: &str| meta.get(k).map(|v| v.parse::<u64>()).transpose();
    let meta_out = CheckpointMeta {
        version,
        centroid_seed: parse_opt("centroid_seed").map_err(|_| Error::Checkpoint("bad centroid_seed".into()))?,
        centroid_hash: meta.get("centroid_hash").cloned(),
        epoch: parse_opt("epoch")
            .map_err(|_| Error::Checkpoint("bad epoch".into()))?
            .map(|e| e as usize),
        config,
    };

    let st = SafeTensors::deserialize(&bytes).map_err(ck)?;
    let dev = candle_core::Device::Cpu;
    let s_x = st.tensor(S_X).map_err(ck)?.load(&dev)?;
    let dtype = s_x.dtype();
    if !matches!(dtype, DType::F32 | DType::F64) {
        return Err(Error::Checkpoint(format!("unsupported dtype {dtype:?}")));
    }
    let model = C2fModel::new(&meta_out.config, dtype, 0)?;
    let mut restored = 0;
    for (name, view) in st.tensors() {
        if name == S_X || name == S_Q {
            continue;
        }
        model.params().set(&name, &view.load(&dev)?)?;
        restored += 1;
    }
    if restored != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "{}: {restored} of {} parameters present",
            path.display(),
            model.params().len()
        )));
    }
    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let s_q = st.tensor(S_Q).map_err(ck)?.load(&dev)?;
    let loss = LossParams::new(
        Balance {
            s_x: scalar(&s_x)?,
            s_q: scalar(&s_q)?,
        },
        dtype,
    )?;
    Ok((model, loss, meta_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{to_f64_vec, BackboneSpec};

    #[test]
    fn round_trip_preserves_every_parameter() {
        let cfg = ModelConfig {
            num_scenes: 2,
            token_dim: 8,
            layers: 1,
            heads: 2,
            mlp_dim: 8,
            dropout: 0.0,
            k_x: 1,
            k_q: 1,
            head_hidden: 4,
            backbone: BackboneSpec::tiny_64(),
        };
        let model = C2fModel::new(&cfg, DType::F32, 11).unwrap();
        let loss = LossParams::new(Balance { s_x: 0.25, s_q: -2.5 }, DType::F32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        save_checkpoint(&path, &model, &loss, None, Some(3)).unwrap();
        let (back, loss_back, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.config, cfg);
        assert_eq!(meta.epoch, Some(3));
        assert_eq!(meta.centroid_hash, None);
        assert_eq!(loss_back.balance().unwrap(), Balance { s_x: 0.25, s_q: -2.5 });
        for (name, var) in model.params().iter() {
            let other = back.params().get(name).unwrap();
            assert_eq!(
                to_f64_vec(var.as_tensor()).unwrap(),
                to_f64_vec(other.as_tensor()).unwrap()
            );
        }
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
