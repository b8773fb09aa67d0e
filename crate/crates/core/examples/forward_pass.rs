//! One inference pass of the reference-size model: scene log-probabilities,
//! centroid choices, residuals and the final poses.

use std::collections::BTreeMap;

use c2f_pose::clustering::CentroidSet;
use c2f_pose::model::{to_f64_vec, C2fModel, CentroidTable, ForwardOptions, ModelConfig};
use c2f_pose::Quaternion;
use candle_core::{DType, Device, Tensor};

fn main() -> c2f_pose::Result<()> {
    let cfg = ModelConfig {
        num_scenes: 4,
        k_x: 2,
        k_q: 2,
        ..ModelConfig::default()
    };
    let model = C2fModel::new(&cfg, DType::F32, 0)?;
    println!(
        "{} parameter tensors, {} parameters ({:.1} MB)",
        model.params().len(),
        model.num_params(),
        model.params().num_bytes() as f64 / 1e6
    );

    let sets: BTreeMap<usize, CentroidSet> = (0..4)
        .map(|s| {
            let set = CentroidSet {
                scene_id: s,
                seed: 0,
                position_centroids: vec![[s as f64, 0.0, 1.0], [s as f64, 1.0, 1.0]],
                orientation_centroids: vec![Quaternion::IDENTITY, Quaternion::new(0.0, 0.0, 0.0, 1.0)],
            };
            (s, set)
        })
        .collect();
    let table = CentroidTable::new(&sets)?;

    let images = Tensor::randn(0f32, 1.0, (2, 3, 224, 224), &Device::Cpu)?;
    let out = model.forward(&images, &table, &ForwardOptions::infer())?;
    println!("fused embeddings: {:?}", out.fused.dims());
    for (b, row) in to_f64_vec(&out.scene_log_probs)?.chunks(4).enumerate() {
        let probs: Vec<String> = row.iter().map(|lp| format!("{:.3}", lp.exp())).collect();
        println!(
            "image {b}: scene probs [{}] -> scene {}, centroids ({}, {})",
            probs.join(", "),
            out.selected_scenes[b],
            out.selected_position_centroids[b],
            out.selected_orientation_centroids[b]
        );
    }
    // Fresh residual heads output zero, so the pose is exactly the centroid.
    for p in out.poses()? {
        println!("pose {:?} {:?}", p.position, p.orientation.to_array());
    }
    Ok(())
}
