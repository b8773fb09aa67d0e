use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::model::{upsample_bilinear, AttentionMaps, C2fModel, CentroidTable, EncoderAttention};

/// Per-image result of [`export_attention`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSummary {
    pub name: String,
    pub predicted_scene: usize,
    pub ranking: Vec<usize>,
    pub scores: Vec<f64>,
    pub files: Vec<PathBuf>,
}

/// Rescales to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_heatmap(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Attention each token receives in the last encoder layer, averaged over
/// queries.
pub fn encoder_heatmap(enc: &EncoderAttention) -> Vec<f64> {
    let t = enc.grid.0 * enc.grid.1;
    match enc.layers.last() {
        Some(m) => (0..t)
            .map(|j| (0..t).map(|i| m[i * t + j]).sum::<f64>() / t as f64)
            .collect(),
        None => vec![0.0; t],
    }
}

fn write_heatmap(path: &Path, map: &[f64], grid: (usize, usize), size: (usize, usize)) -> Result<()> {
    let up = normalize_heatmap(&upsample_bilinear(map, grid, size)?);
    let img = GrayImage::from_fn(size.1 as u32, size.0 as u32, |x, y| {
        Luma([(up[y as usize * size.1 + x as usize] * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}

fn dump_maps(maps: &AttentionMaps) -> String {
    let mut s = String::new();
    let row = |s: &mut String, label: &str, grid: (usize, usize), v: &[f64]| {
        let _ = write!(s, "{label} {} {}", grid.0, grid.1);
        for x in v {
            let _ = write!(s, " {x}");
        }
        s.push('\n');
    };
    row(
        &mut s,
        "encoder_position",
        maps.position_encoder.grid,
        &encoder_heatmap(&maps.position_encoder),
    );
    row(
        &mut s,
        "encoder_orientation",
        maps.orientation_encoder.grid,
        &encoder_heatmap(&maps.orientation_encoder),
    );
    for (i, m) in maps.position_decoder.iter().enumerate() {
        row(&mut s, &format!("decoder_position_{i}"), maps.position_encoder.grid, m);
    }
    for (i, m) in maps.orientation_decoder.iter().enumerate() {
        row(
            &mut s,
            &format!("decoder_orientation_{i}"),
            maps.orientation_encoder.grid,
            m,
        );
    }
    s
}

/// Writes encoder heatmaps for both branches, one position-decoder heatmap
/// per scene, raw map dumps and a `ranking.txt` summary into `out_dir`.
pub fn export_attention(
    model: &C2fModel,
    centroids: &CentroidTable,
    images: &[(String, ImageTensor)],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<AttentionSummary>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut summaries = Vec::with_capacity(images.len());
    let mut ranking = String::from("# image predicted_scene ranking... | scores...\n");
    for (name, img) in images {
        if name.is_empty() || name.contains(['/', '\\', ' ']) {
            return Err(Error::Config(format!("invalid image name `{name}`")));
        }
        let batch = model.batch_images(&[img.data.as_slice()])?;
        let maps = model
            .extract_attention(&batch, centroids)?
            .pop()
            .ok_or(Error::EmptyInput("attention maps"))?;
        let size = maps.input_size;
        let mut files = Vec::new();
        for (tag, enc) in [
            ("position", &maps.position_encoder),
            ("orientation", &maps.orientation_encoder),
        ] {
            let path = out_dir.join(format!("{name}_encoder_{tag}.png"));
            write_heatmap(&path, &encoder_heatmap(enc), enc.grid, size)?;
            files.push(path);
        }
        for (i, m) in maps.position_decoder.iter().enumerate() {
            let path = out_dir.join(format!("{name}_decoder_scene{i:03}.png"));
            write_heatmap(&path, m, maps.position_encoder.grid, size)?;
            files.push(path);
        }
        let dump = out_dir.join(format!("{name}_attention.txt"));
        std::fs::write(&dump, dump_maps(&maps))?;
        files.push(dump);

        let _ = write!(ranking, "{name} {}", maps.predicted_scene);
        for r in &maps.ranking {
            let _ = write!(ranking, " {r}");
        }
        ranking.push_str(" |");
        for v in &maps.scene_scores {
            let _ = write!(ranking, " {v:.6}");
        }
        ranking.push('\n');
        summaries.push(AttentionSummary {
            name: name.clone(),
            predicted_scene: maps.predicted_scene,
            ranking: maps.ranking,
            scores: maps.scene_scores,
            files,
        });
    }
    std::fs::write(out_dir.join("ranking.txt"), ranking)?;
    Ok(summaries)
}
