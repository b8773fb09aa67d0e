//! Compares autograd gradients of the full training loss with central
//! finite differences, in double precision on a very small model.

use c2f_pose::clustering::CentroidSet;
use c2f_pose::loss::{multi_scene_loss, Balance, LossParams, SupervisionTarget};
use c2f_pose::model::{to_f64_vec, BackboneSpec, C2fModel, CentroidTable, ConvStage, ForwardOptions, ModelConfig};
use c2f_pose::Quaternion;
use candle_core::{DType, Device, Tensor, Var};

fn main() -> c2f_pose::Result<()> {
    let cfg = ModelConfig {
        num_scenes: 2,
        token_dim: 8,
        layers: 1,
        heads: 2,
        mlp_dim: 8,
        dropout: 0.0,
        k_x: 1,
        k_q: 1,
        head_hidden: 8,
        backbone: BackboneSpec {
            input_height: 16,
            input_width: 16,
            input_channels: 3,
            stages: vec![
                ConvStage { channels: 4, stride: 2 },
                ConvStage { channels: 4, stride: 2 },
            ],
            position_tap: 1,
            orientation_tap: 0,
        },
    };
    let model = C2fModel::new(&cfg, DType::F64, 3)?;
    let loss = LossParams::new(Balance { s_x: 0.5, s_q: -1.0 }, DType::F64)?;
    let sets = (0..2)
        .map(|s| {
            let set = CentroidSet {
                scene_id: s,
                seed: 0,
                position_centroids: vec![[s as f64, 1.0, 0.0]],
                orientation_centroids: vec![Quaternion::IDENTITY],
            };
            (s, set)
        })
        .collect();
    let table = CentroidTable::new(&sets)?;
    let images = Tensor::randn(0f64, 1.0, (1, 3, 16, 16), &Device::Cpu)?;
    let target = SupervisionTarget {
        positions: vec![[1.2, 0.7, 0.3]],
        orientations: vec![Quaternion::from_axis_angle([0.0, 1.0, 0.0], 0.4)?],
        scenes: vec![1],
        position_centroids: vec![0],
        orientation_centroids: vec![0],
    };
    let opts = ForwardOptions::teacher_forced(vec![1], vec![0], vec![0]);
    let total = || -> c2f_pose::Result<Tensor> {
        let out = model.forward(&images, &table, &opts)?;
        Ok(multi_scene_loss(&out, &target, &loss)?.total)
    };
    let grads = total()?.backward()?;

    let mut vars: Vec<(String, Var)> = model.params().iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
    vars.push(("loss.s_x".into(), loss.s_x.clone()));
    vars.push(("loss.s_q".into(), loss.s_q.clone()));
    let h = 1e-5;
    for (name, var) in vars.iter().step_by(5) {
        let Some(g) = grads.get(var.as_tensor()) else { continue };
        let analytic = to_f64_vec(g)?;
        let original = to_f64_vec(var.as_tensor())?;
        let probe = |delta: f64| -> c2f_pose::Result<f64> {
            let mut v = original.clone();
            v[0] += delta;
            var.set(&Tensor::from_vec(v, var.dims(), &Device::Cpu)?)?;
            Ok(total()?.to_scalar::<f64>()?)
        };
        let fd = (probe(h)? - probe(-h)?) / (2.0 * h);
        var.set(&Tensor::from_vec(original, var.dims(), &Device::Cpu)?)?;
        println!("{name:<48} autograd {:>12.6e}  finite diff {:>12.6e}", analytic[0], fd);
    }
    Ok(())
}
