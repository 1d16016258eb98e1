//! Pose-regression training objective and evaluation metrics.

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::pose::{PoseError, PoseVector, UnitQuaternion};

/// Rotation-term weight that balances the expected translation and rotation errors.
pub const DEFAULT_BETA: f64 = 500_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

impl LossConfig {
    pub fn new(beta: f64) -> Result<Self, String> {
        if beta > 0.0 && beta.is_finite() {
            Ok(Self { beta })
        } else {
            Err(format!("beta must be positive and finite, got {beta}"))
        }
    }
}

/// `||x_hat - x|| + beta * ||q_hat - q / ||q||||`.
///
/// Only the ground-truth quaternion is normalized; the predicted quaternion
/// enters the loss exactly as the regressor produced it.
pub fn pose_loss(
    pred_x: &Vector3<f64>,
    pred_q: &[f64; 4],
    gt_x: &Vector3<f64>,
    gt_q: &[f64; 4],
    cfg: &LossConfig,
) -> Result<f64, PoseError> {
    let gt_q = Vector4::from(*gt_q);
    let norm = gt_q.norm();
    if !(norm > 1e-12) {
        return Err(PoseError::ZeroQuaternion(norm));
    }
    let rot = (Vector4::from(*pred_q) - gt_q / norm).norm();
    Ok((pred_x - gt_x).norm() + cfg.beta * rot)
}

/// Translation error in millimeters.
pub fn translation_error(pred: &PoseVector, gt: &PoseVector) -> f64 {
    1000.0 * (pred.x - gt.x).norm()
}

/// Geodesic angle between two rotations in degrees, in `[0, 180]`.
pub fn rotation_error_deg(pred: &PoseVector, gt: &PoseVector) -> f64 {
    quaternion_angle_deg(&pred.q, &gt.q)
}

pub fn quaternion_angle_deg(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    a.conjugate().mul(b).angle().to_degrees()
}
