//! Decoupled position-based visual servoing law.
//!
//! With the error `s = (c*_t_c, theta u)` of the current frame seen from
//! the desired one, the commanded camera twist is
//!
//! ```text
//! v = -lambda * (c*_R_c)^T * c*_t_c
//! w = -lambda * theta u
//! ```
//!
//! Estimators report the opposite transform `c_T_c*`, so the law inverts it
//! first. Note that `(c*_R_c)^T * c*_t_c = -c_t_c*`, i.e. `v = lambda * c_t_c*`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::pose::PoseVector;

/// Camera-frame velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DofMode {
    #[default]
    Six,
    /// x, y, z and yaw only (under-actuated quadrotor).
    Four,
}

/// Optional bounds on the commanded linear and angular speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityClamp {
    pub max_v: f64,
    pub max_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    /// Proportional gain in 1/s.
    pub lambda: f64,
    pub dof_mode: DofMode,
    #[serde(default)]
    pub clamp: Option<VelocityClamp>,
}

impl ControlConfig {
    pub fn new(lambda: f64, dof_mode: DofMode) -> Self {
        Self {
            lambda,
            dof_mode,
            clamp: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be positive, got {}", self.lambda));
        }
        if let Some(c) = self.clamp {
            if !(c.max_v > 0.0 && c.max_w > 0.0) {
                return Err("velocity clamp bounds must be positive".into());
            }
        }
        Ok(())
    }

    /// Full command pipeline: control law, DOF projection, then clamping.
    pub fn command(&self, rel: &PoseVector) -> Twist {
        let mut t = pbvs_twist(rel, self);
        if self.dof_mode == DofMode::Four {
            t = project_4dof(&t);
        }
        match self.clamp {
            Some(c) => clamp_twist(&t, &c),
            None => t,
        }
    }
}

/// Control law on an estimate `rel = c_T_c*` (desired frame seen from current).
pub fn pbvs_twist(rel: &PoseVector, cfg: &ControlConfig) -> Twist {
    let desired_t_current = rel.as_pose().inverse();
    let r = desired_t_current.rotation;
    let v = -cfg.lambda * r.conjugate().rotate(&desired_t_current.translation);
    let w = -cfg.lambda * r.log();
    Twist { v, w }
}

/// Suppresses roll and pitch rates.
pub fn project_4dof(t: &Twist) -> Twist {
    Twist {
        v: t.v,
        w: Vector3::new(0.0, 0.0, t.w.z),
    }
}

pub fn clamp_twist(t: &Twist, c: &VelocityClamp) -> Twist {
    let scale = |x: Vector3<f64>, max: f64| {
        let n = x.norm();
        if n > max {
            x * (max / n)
        } else {
            x
        }
    };
    Twist {
        v: scale(t.v, c.max_v),
        w: scale(t.w, c.max_w),
    }
}
