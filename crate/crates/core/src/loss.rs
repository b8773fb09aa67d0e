//! Multi-scene training objective.
//!
//! Scalar versions of every term are provided alongside the tensor versions
//! used for training, which reduce over the batch by the mean.

use candle_core::{DType, Device, Tensor, Var, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{to_f64_vec, ModelOutput};
use crate::pose::Quaternion;

/// Tiny offset inside the position square root; keeps the gradient finite
/// when a prediction is exact.
const NORM_EPS: f64 = 1e-24;

/// Log-variance terms weighting the position and orientation losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub s_x: f64,
    pub s_q: f64,
}

impl Default for Balance {
    fn default() -> Self {
        Self { s_x: 0.0, s_q: -3.0 }
    }
}

/// Trainable `s_x`, `s_q`, optimized jointly with the model.
pub struct LossParams {
    pub s_x: Var,
    pub s_q: Var,
}

impl LossParams {
    pub fn new(init: Balance, dtype: DType) -> Result<Self> {
        let scalar = |v: f64| -> Result<Var> { Ok(Var::from_tensor(&Tensor::new(v, &Device::Cpu)?.to_dtype(dtype)?)?) };
        Ok(Self {
            s_x: scalar(init.s_x)?,
            s_q: scalar(init.s_q)?,
        })
    }

    pub fn balance(&self) -> Result<Balance> {
        let get = |v: &Var| -> Result<f64> { Ok(v.as_tensor().to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok(Balance {
            s_x: get(&self.s_x)?,
            s_q: get(&self.s_q)?,
        })
    }

    pub fn set(&self, b: Balance) -> Result<()> {
        let dtype = self.s_x.dtype();
        self.s_x.set(&Tensor::new(b.s_x, &Device::Cpu)?.to_dtype(dtype)?)?;
        self.s_q.set(&Tensor::new(b.s_q, &Device::Cpu)?.to_dtype(dtype)?)?;
        Ok(())
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.s_x.clone(), self.s_q.clone()]
    }
}

/// `||x0 - x||`.
pub fn position_loss(x: &[f64; 3], x0: &[f64; 3]) -> f64 {
    crate::pose::position_error(x, x0)
}

/// `||q0 - q/||q||||`; the estimate is normalized, the target is used as is.
pub fn orientation_loss(q: &Quaternion, q0: &Quaternion) -> Result<f64> {
    let q = q.normalize()?;
    let d = [q0.w - q.w, q0.x - q.x, q0.y - q.y, q0.z - q.z];
    Ok(d.iter().map(|v| v * v).sum::<f64>().sqrt())
}

pub fn pose_loss(l_x: f64, l_q: f64, b: Balance) -> f64 {
    l_x * (-b.s_x).exp() + b.s_x + l_q * (-b.s_q).exp() + b.s_q
}

pub fn nll(log_probs: &[f64], index: usize) -> Result<f64> {
    log_probs.get(index).map(|lp| -lp).ok_or(Error::IndexOutOfRange {
        index,
        len: log_probs.len(),
    })
}

/// Ground truth for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTarget {
    pub positions: Vec<[f64; 3]>,
    pub orientations: Vec<Quaternion>,
    pub scenes: Vec<usize>,
    pub position_centroids: Vec<usize>,
    pub orientation_centroids: Vec<usize>,
}

impl SupervisionTarget {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(Error::EmptyInput("supervision target"));
        }
        if [
            self.positions.len(),
            self.orientations.len(),
            self.position_centroids.len(),
            self.orientation_centroids.len(),
        ]
        .iter()
        .any(|&n| n != b)
        {
            return Err(Error::Config("supervision target fields differ in length".into()));
        }
        Ok(())
    }
}

/// Differentiable loss terms, each a scalar tensor averaged over the batch.
pub struct LossTerms {
    pub total: Tensor,
    pub position: Tensor,
    pub orientation: Tensor,
    pub pose: Tensor,
    pub scene_nll: Tensor,
    pub position_centroid_nll: Tensor,
    pub orientation_centroid_nll: Tensor,
}

/// Plain values of [`LossTerms`] for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub position: f64,
    pub orientation: f64,
    pub pose: f64,
    pub scene_nll: f64,
    pub position_centroid_nll: f64,
    pub orientation_centroid_nll: f64,
}

impl LossTerms {
    pub fn breakdown(&self) -> Result<LossBreakdown> {
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok(LossBreakdown {
            total: v(&self.total)?,
            position: v(&self.position)?,
            orientation: v(&self.orientation)?,
            pose: v(&self.pose)?,
            scene_nll: v(&self.scene_nll)?,
            position_centroid_nll: v(&self.position_centroid_nll)?,
            orientation_centroid_nll: v(&self.orientation_centroid_nll)?,
        })
    }
}

fn batch_nll(log_probs: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let k = log_probs.dim(D::Minus1)?;
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::IndexOutOfRange { index: bad, len: k });
    }
    let idx: Vec<u32> = targets.iter().map(|&t| t as u32).collect();
    let idx = Tensor::from_vec(idx, (targets.len(), 1), log_probs.device())?;
    Ok(log_probs.gather(&idx, 1)?.neg()?.mean_all()?)
}

fn row_norm(x: &Tensor) -> Result<Tensor> {
    Ok((x.sqr()?.sum(D::Minus1)? + NORM_EPS)?.sqrt()?)
}

/// `L_p + NLL(scene) + NLL(c_x) + NLL(c_q)` with per-term batch means.
pub fn multi_scene_loss(output: &ModelOutput, target: &SupervisionTarget, params: &LossParams) -> Result<LossTerms> {
    target.validate()?;
    let b = target.len();
    if output.batch_size() != b {
        return Err(Error::Config(format!(
            "output batch {} does not match target batch {b}",
            output.batch_size()
        )));
    }
    let dtype = output.position.dtype();
    let dev = output.position.device();
    let x0: Vec<f64> = target.positions.iter().flatten().copied().collect();
    let q0: Vec<f64> = target.orientations.iter().flat_map(|q| q.to_array()).collect();
    let x0 = Tensor::from_vec(x0, (b, 3), dev)?.to_dtype(dtype)?;
    let q0 = Tensor::from_vec(q0, (b, 4), dev)?.to_dtype(dtype)?;

    let l_x = row_norm(&(&x0 - &output.position)?)?.mean_all()?;
    let q_unit = output
        .orientation
        .broadcast_div(&row_norm(&output.orientation)?.unsqueeze(1)?)?;
    let l_q = row_norm(&(&q0 - &q_unit)?)?.mean_all()?;

    let s_x = params.s_x.as_tensor();
    let s_q = params.s_q.as_tensor();
    let pose = ((l_x.mul(&s_x.neg()?.exp()?)? + s_x)? + (l_q.mul(&s_q.neg()?.exp()?)? + s_q)?)?;

    let scene_nll = batch_nll(&output.scene_log_probs, &target.scenes)?;
    let position_centroid_nll = batch_nll(&output.position_centroid_log_probs, &target.position_centroids)?;
    let orientation_centroid_nll = batch_nll(&output.orientation_centroid_log_probs, &target.orientation_centroids)?;
    let total = (((&pose + &scene_nll)? + &position_centroid_nll)? + &orientation_centroid_nll)?;
    Ok(LossTerms {
        total,
        position: l_x,
        orientation: l_q,
        pose,
        scene_nll,
        position_centroid_nll,
        orientation_centroid_nll,
    })
}

/// Scalar evaluation of the same objective from plain values.
pub fn multi_scene_loss_scalar(output: &ModelOutput, target: &SupervisionTarget, b: Balance) -> Result<LossBreakdown> {
    target.validate()?;
    let n = target.len() as f64;
    let x = to_f64_vec(&output.position)?;
    let q = to_f64_vec(&output.orientation)?;
    let mut l_x = 0.0;
    let mut l_q = 0.0;
    for i in 0..target.len() {
        l_x += position_loss(&[x[3 * i], x[3 * i + 1], x[3 * i + 2]], &target.positions[i]);
        let qi = Quaternion::new(q[4 * i], q[4 * i + 1], q[4 * i + 2], q[4 * i + 3]);
        l_q += orientation_loss(&qi, &target.orientations[i])?;
    }
    let mean_nll = |lp: &Tensor, t: &[usize]| -> Result<f64> {
        let k = lp.dim(D::Minus1)?;
        let v = to_f64_vec(lp)?;
        let mut acc = 0.0;
        for (row, &ti) in v.chunks_exact(k).zip(t) {
            acc += nll(row, ti)?;
        }
        Ok(acc / n)
    };
    let (l_x, l_q) = (l_x / n, l_q / n);
    let pose = pose_loss(l_x, l_q, b);
    let scene_nll = mean_nll(&output.scene_log_probs, &target.scenes)?;
    let position_centroid_nll = mean_nll(&output.position_centroid_log_probs, &target.position_centroids)?;
    let orientation_centroid_nll = mean_nll(&output.orientation_centroid_log_probs, &target.orientation_centroids)?;
    Ok(LossBreakdown {
        total: pose + scene_nll + position_centroid_nll + orientation_centroid_nll,
        position: l_x,
        orientation: l_q,
        pose,
        scene_nll,
        position_centroid_nll,
        orientation_centroid_nll,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[allow(clippy::too_many_arguments)]
    fn out_from(
        x: &[f64],
        q: &[f64],
        scene_lp: &[f64],
        n: usize,
        cx: &[f64],
        kx: usize,
        cq: &[f64],
        kq: usize,
    ) -> ModelOutput {
        let b = x.len() / 3;
        let t = |v: &[f64], c: usize| Tensor::from_slice(v, (b, c), &Device::Cpu).unwrap();
        let zeros = Tensor::zeros((b, 1), DType::F64, &Device::Cpu).unwrap();
        ModelOutput {
            scene_log_probs: t(scene_lp, n),
            position_embeddings: zeros.clone(),
            orientation_embeddings: zeros.clone(),
            fused: zeros.clone(),
            selected_scenes: vec![0; b],
            position_centroid_log_probs: t(cx, kx),
            orientation_centroid_log_probs: t(cq, kq),
            selected_position_centroids: vec![0; b],
            selected_orientation_centroids: vec![0; b],
            position_residual: zeros.clone(),
            orientation_residual: zeros,
            position: t(x, 3),
            orientation: t(q, 4),
            trace: None,
        }
    }

    fn target(x: [f64; 3], q: Quaternion, s: usize, cx: usize, cq: usize) -> SupervisionTarget {
        SupervisionTarget {
            positions: vec![x],
            orientations: vec![q],
            scenes: vec![s],
            position_centroids: vec![cx],
            orientation_centroids: vec![cq],
        }
    }

    #[test]
    fn position_loss_examples() {
        assert_eq!(position_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(position_loss(&[0.0; 3], &[3.0, 4.0, 0.0]), 5.0);
    }

    #[test]
    fn orientation_loss_examples() {
        let q0 = Quaternion::IDENTITY;
        assert_eq!(orientation_loss(&q0, &q0).unwrap(), 0.0);
        assert_eq!(orientation_loss(&q0.scale(2.0), &q0).unwrap(), 0.0);
        let d = orientation_loss(&Quaternion::new(0.0, 1.0, 0.0, 0.0), &q0).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(orientation_loss(&Quaternion::new(0.0, 0.0, 0.0, 0.0), &q0).is_err());
    }

    #[test]
    fn pose_loss_examples() {
        let zero = Balance { s_x: 0.0, s_q: 0.0 };
        assert_eq!(pose_loss(1.0, 0.5, zero), 1.5);
        assert_eq!(pose_loss(0.0, 0.0, zero), 0.0);
        let b = Balance {
            s_x: 2f64.ln(),
            s_q: 0.0,
        };
        assert!((pose_loss(1.0, 0.0, b) - 1.193_147_180_559_945).abs() < 1e-12);
    }

    #[test]
    fn nll_examples() {
        let uniform = [(0.25f64).ln(); 4];
        assert!((nll(&uniform, 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(nll(&[0.0, f64::NEG_INFINITY], 0).unwrap(), 0.0);
        assert_eq!(nll(&[0.0], 0).unwrap(), 0.0);
        assert!(nll(&[0.0], 1).is_err());
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let out = out_from(
            &[1.0, 2.0, 3.0],
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, -50.0],
            2,
            &[0.0],
            1,
            &[-60.0, 0.0],
            2,
        );
        let params = LossParams::new(Balance { s_x: 0.0, s_q: 0.0 }, DType::F64).unwrap();
        let t = target([1.0, 2.0, 3.0], Quaternion::IDENTITY, 0, 0, 1);
        let b = multi_scene_loss(&out, &t, &params).unwrap().breakdown().unwrap();
        assert!(b.total.abs() < 1e-11);
    }

    #[test]
    fn single_class_loss_is_pose_loss() {
        let out = out_from(&[0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0], 1, &[0.0], 1, &[0.0], 1);
        let params = LossParams::new(Balance::default(), DType::F64).unwrap();
        let t = target([3.0, 4.0, 0.0], Quaternion::IDENTITY, 0, 0, 0);
        let b = multi_scene_loss(&out, &t, &params).unwrap().breakdown().unwrap();
        let expect = pose_loss(5.0, 2f64.sqrt(), Balance::default());
        assert!((b.total - expect).abs() < 1e-12);
        assert_eq!(b.total, b.pose);
    }

    #[test]
    fn tensor_and_scalar_losses_agree() {
        let out = out_from(
            &[0.5, -1.0, 2.0, 1.0, 1.0, 1.0],
            &[0.9, 0.1, -0.2, 0.3, 0.2, 0.7, 0.1, -0.1],
            &[(0.7f64).ln(), (0.3f64).ln(), (0.1f64).ln(), (0.9f64).ln()],
            2,
            &[(0.5f64).ln(), (0.5f64).ln(), (0.2f64).ln(), (0.8f64).ln()],
            2,
            &[0.0, 0.0],
            1,
        );
        let t = SupervisionTarget {
            positions: vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]],
            orientations: vec![Quaternion::IDENTITY, Quaternion::new(0.0, 0.6, 0.8, 0.0)],
            scenes: vec![0, 0],
            position_centroids: vec![1, 0],
            orientation_centroids: vec![0, 0],
        };
        let bal = Balance { s_x: 0.3, s_q: -1.2 };
        let params = LossParams::new(bal, DType::F64).unwrap();
        let a = multi_scene_loss(&out, &t, &params).unwrap().breakdown().unwrap();
        let s = multi_scene_loss_scalar(&out, &t, bal).unwrap();
        for (u, v) in [
            (a.total, s.total),
            (a.position, s.position),
            (a.orientation, s.orientation),
            (a.scene_nll, s.scene_nll),
            (a.position_centroid_nll, s.position_centroid_nll),
        ] {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
        let sum = a.pose + a.scene_nll + a.position_centroid_nll + a.orientation_centroid_nll;
        assert!((a.total - sum).abs() < 1e-12);
    }

    #[test]
    fn target_index_out_of_range() {
        let out = out_from(&[0.0; 3], &[1.0, 0.0, 0.0, 0.0], &[0.0], 1, &[0.0], 1, &[0.0], 1);
        let params = LossParams::new(Balance::default(), DType::F64).unwrap();
        let t = target([0.0; 3], Quaternion::IDENTITY, 1, 0, 0);
        assert!(matches!(
            multi_scene_loss(&out, &t, &params),
            Err(Error::IndexOutOfRange { index: 1, len: 1 })
        ));
    }

    #[test]
    fn balance_gradient_matches_closed_form() {
        let params = LossParams::new(Balance { s_x: 0.4, s_q: -0.7 }, DType::F64).unwrap();
        let l_x = Tensor::new(2.5f64, &Device::Cpu).unwrap();
        let s_x = params.s_x.as_tensor();
        let lp = (l_x.mul(&s_x.neg().unwrap().exp().unwrap()).unwrap() + s_x).unwrap();
        let grads = lp.backward().unwrap();
        let g = grads.get(s_x).unwrap().to_scalar::<f64>().unwrap();
        let expect = 1.0 - 2.5 * (-0.4f64).exp();
        let h = 1e-6;
        let f = |s: f64| pose_loss(2.5, 0.0, Balance { s_x: s, s_q: 0.0 });
        let fd = (f(0.4 + h) - f(0.4 - h)) / (2.0 * h);
        assert!((g - expect).abs() / expect.abs() < 1e-12);
        assert!((fd - expect).abs() / expect.abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn orientation_loss_is_scale_invariant(
            q in prop::array::uniform4(-1.0f64..1.0),
            alpha in 1e-3f64..1e3,
        ) {
            let q = Quaternion::from_array(q);
            prop_assume!(q.norm() > 1e-3);
            let q0 = Quaternion::new(0.5, 0.5, 0.5, 0.5);
            let a = orientation_loss(&q, &q0).unwrap();
            let b = orientation_loss(&q.scale(alpha), &q0).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn pose_loss_is_monotone(
            lx in 0.0f64..10.0, lq in 0.0f64..10.0, d in 1e-6f64..1.0,
            sx in -5.0f64..5.0, sq in -5.0f64..5.0,
        ) {
            let b = Balance { s_x: sx, s_q: sq };
            prop_assert!(pose_loss(lx + d, lq, b) > pose_loss(lx, lq, b));
            prop_assert!(pose_loss(lx, lq + d, b) > pose_loss(lx, lq, b));
        }

        #[test]
        fn nll_of_normalized_probs_is_nonnegative(logits in prop::collection::vec(-20.0f64..20.0, 1..8), pick in 0usize..8) {
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let lp: Vec<f64> = logits.iter().map(|v| v - lse).collect();
            prop_assert!(nll(&lp, pick % lp.len()).unwrap() >= -1e-12);
        }
    }
}
