//! Pose representation, quaternion algebra and localization error metrics.
//!
//! Quaternions are scalar-first `(w, x, y, z)`. Orientations are stored
//! normalized and in canonical sign (`w >= 0`, ties resolved on the first
//! nonzero vector component) so that `q` and `-q` map to one representative.

use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidQuaternion(format!("degenerate axis {axis:?}")));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Ok(Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n))
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Unit quaternion pointing the same way as `self`.
    pub fn normalize(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidQuaternion(format!(
                "cannot normalize ({}, {}, {}, {})",
                self.w, self.x, self.y, self.z
            )));
        }
        Ok(self.scale(1.0 / n))
    }

    /// `self` or `-self`, whichever satisfies the canonical sign rule.
    pub fn canonicalize(self) -> Self {
        let first_nonzero = [self.w, self.x, self.y, self.z]
            .into_iter()
            .find(|c| *c != 0.0)
            .unwrap_or(0.0);
        let q = if first_nonzero < 0.0 { -self } else { self };
        // Adding zero turns -0.0 into 0.0.
        Quaternion::new(q.w + 0.0, q.x + 0.0, q.y + 0.0, q.z + 0.0)
    }

    pub fn is_canonical(&self) -> bool {
        self.canonicalize() == *self
    }

    /// Normalize then canonicalize; the form every stored orientation takes.
    pub fn unit_canonical(self) -> Result<Self> {
        Ok(self.normalize()?.canonicalize())
    }

    /// Rotate a 3-vector by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion::new(0.0, v[0], v[1], v[2]);
        let r = *self * p * self.conjugate();
        [r.x, r.y, r.z]
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Self::Output {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Hamilton product.
impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Self::Output {
        let l = self;
        Quaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

/// Camera pose: position in meters plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: Quaternion,
}

impl Pose {
    /// Builds a pose, storing the orientation in unit canonical form.
    pub fn new(position: [f64; 3], orientation: Quaternion) -> Result<Self> {
        if position.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite position {position:?}")));
        }
        Ok(Self {
            position,
            orientation: orientation.unit_canonical()?,
        })
    }

    pub fn error_to(&self, ground_truth: &Pose) -> Result<PoseError> {
        Ok(PoseError {
            position_err: position_error(&self.position, &ground_truth.position),
            orientation_err: orientation_error_deg(&self.orientation, &ground_truth.orientation)?,
        })
    }
}

/// Position error in meters and orientation error in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub position_err: f64,
    pub orientation_err: f64,
}

pub fn position_error(estimate: &[f64; 3], ground_truth: &[f64; 3]) -> f64 {
    estimate
        .iter()
        .zip(ground_truth)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
}

/// Rotation angle between two orientations, in degrees within `[0, 180]`.
///
/// Equals `2 acos |<q_est, q_gt>|` on the normalized inputs, so `q` and `-q`
/// are the same orientation. Evaluated as `4 atan2(|a - b|, |a + b|)` with
/// `b` sign-aligned to `a`, which stays exact near zero where `acos` loses
/// half its digits.
pub fn orientation_error_deg(estimate: &Quaternion, ground_truth: &Quaternion) -> Result<f64> {
    let a = estimate.normalize()?;
    let mut b = ground_truth.normalize()?;
    if a.dot(&b) < 0.0 {
        b = -b;
    }
    let (a, b) = (a.to_array(), b.to_array());
    let norm = |f: &dyn Fn(usize) -> f64| (0..4).map(|i| f(i) * f(i)).sum::<f64>().sqrt();
    let diff = norm(&|i| a[i] - b[i]);
    let sum = norm(&|i| a[i] + b[i]);
    Ok(4.0 * diff.atan2(sum).to_degrees())
}

/// Componentwise median; even counts take the lower median.
pub fn median_errors(samples: &[PoseError]) -> Result<PoseError> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("median of no pose errors"));
    }
    let mut pos: Vec<f64> = samples.iter().map(|e| e.position_err).collect();
    let mut ori: Vec<f64> = samples.iter().map(|e| e.orientation_err).collect();
    Ok(PoseError {
        position_err: lower_median(&mut pos),
        orientation_err: lower_median(&mut ori),
    })
}

pub(crate) fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}
