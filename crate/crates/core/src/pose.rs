//! Rigid-body algebra: unit quaternions, SE(3) poses, axis-angle.
//!
//! Conventions:
//! - Quaternions are Hamilton, scalar-first `(w, x, y, z)`, and always kept
//!   in canonical sign: `w >= 0`, and when `w == 0` the first non-zero of
//!   `(x, y, z)` is positive.
//! - A `PoseSE3` named `a_T_b` maps points from frame `b` into frame `a`.
//!   World camera poses are `O_T_c`.
//! - Lengths are meters.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotations below this angle use series expansions.
pub const SMALL_ANGLE: f64 = 1e-7;

const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("quaternion norm {0:e} is too small to normalize")]
    ZeroQuaternion(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalize and sign-canonicalize a raw `(w, x, y, z)` 4-vector.
    pub fn canonicalize(raw: [f64; 4]) -> Result<Self, PoseError> {
        if raw.iter().any(|c| !c.is_finite()) {
            return Err(PoseError::NonFinite("quaternion"));
        }
        let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm <= ZERO_NORM {
            return Err(PoseError::ZeroQuaternion(norm));
        }
        let mut q = raw.map(|c| c / norm);
        let flip = if q[0] != 0.0 {
            q[0] < 0.0
        } else {
            q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
        };
        if flip {
            q = q.map(|c| -c);
        }
        // -0.0 would otherwise survive the sign rule
        let q = q.map(|c| if c == 0.0 { 0.0 } else { c });
        Ok(Self {
            w: q[0],
            x: q[1],
            y: q[2],
            z: q[3],
        })
    }

    /// Canonicalize a value that is known to be close to unit norm.
    fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::canonicalize([w, x, y, z]).expect("product of unit quaternions is unit")
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn conjugate(&self) -> Self {
        Self::renormalized(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self::renormalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.vector().norm().atan2(self.w.abs())
    }

    /// Exponential map of a rotation vector `theta * u`.
    pub fn exp(rotvec: &Vector3<f64>) -> Self {
        let theta = rotvec.norm();
        if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            let half = 0.5 * (1.0 - t2 / 24.0);
            return Self::renormalized(
                1.0 - t2 / 8.0,
                half * rotvec.x,
                half * rotvec.y,
                half * rotvec.z,
            );
        }
        let s = (0.5 * theta).sin() / theta;
        Self::renormalized(
            (0.5 * theta).cos(),
            s * rotvec.x,
            s * rotvec.y,
            s * rotvec.z,
        )
    }

    /// Logarithm map: the rotation vector `theta * u` with `theta` in `[0, pi]`.
    pub fn log(&self) -> Vector3<f64> {
        let v = self.vector();
        let s = v.norm();
        let theta = 2.0 * s.atan2(self.w);
        if theta < SMALL_ANGLE {
            // theta / sin(theta/2) = 2 (1 + theta^2 / 24 + ...)
            return v * (2.0 * (1.0 + theta * theta / 24.0));
        }
        v * (theta / s)
    }

    pub fn from_axis_angle(aa: &AxisAngle) -> Self {
        let half = 0.5 * aa.theta;
        let s = half.sin();
        Self::renormalized(half.cos(), s * aa.axis.x, s * aa.axis.y, s * aa.axis.z)
    }

    pub fn to_axis_angle(&self) -> AxisAngle {
        let v = self.vector();
        let s = v.norm();
        if s == 0.0 {
            return AxisAngle::zero();
        }
        let theta = 2.0 * s.atan2(self.w);
        AxisAngle {
            theta,
            axis: v / s,
        }
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::exp(&Vector3::new(angle, 0.0, 0.0))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, angle, 0.0))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, angle))
    }

    /// Intrinsic X-Y-Z Euler angles: `Rx(a) * Ry(b) * Rz(c)`.
    pub fn from_euler_xyz(a: f64, b: f64, c: f64) -> Self {
        Self::rot_x(a).mul(&Self::rot_y(b)).mul(&Self::rot_z(c))
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll): `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::rot_z(yaw).mul(&Self::rot_y(pitch)).mul(&Self::rot_x(roll))
    }

    /// Inverse of [`from_euler_xyz`](Self::from_euler_xyz), returning `(a, b, c)`.
    pub fn to_euler_xyz(&self) -> (f64, f64, f64) {
        let r = self.to_matrix();
        let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
        let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
        let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
        (a, b, c)
    }

    /// Inverse of [`from_euler_zyx`](Self::from_euler_zyx), returning `(yaw, pitch, roll)`.
    pub fn to_euler_zyx(&self) -> (f64, f64, f64) {
        let r = self.to_matrix();
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        (yaw, pitch, roll)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(r: &Matrix3<f64>) -> Self {
        let trace = r.trace();
        let raw = if trace > r[(0, 0)] && trace > r[(1, 1)] && trace > r[(2, 2)] {
            let s = 2.0 * (1.0 + trace).sqrt();
            [
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            ]
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
            [
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            ]
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = 2.0 * (1.0 - r[(0, 0)] + r[(1, 1)] - r[(2, 2)]).sqrt();
            [
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            ]
        } else {
            let s = 2.0 * (1.0 - r[(0, 0)] - r[(1, 1)] + r[(2, 2)]).sqrt();
            [
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        Self::renormalized(raw[0], raw[1], raw[2], raw[3])
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = PoseError;

    fn try_from(raw: [f64; 4]) -> Result<Self, Self::Error> {
        Self::canonicalize(raw)
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

/// Rotation as angle and unit axis. The zero rotation uses axis `(1, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub theta: f64,
    pub axis: Vector3<f64>,
}

impl AxisAngle {
    pub fn zero() -> Self {
        Self {
            theta: 0.0,
            axis: Vector3::x(),
        }
    }

    /// Builds from any non-zero axis (normalized here) and an angle in `[0, pi]`.
    pub fn new(theta: f64, axis: Vector3<f64>) -> Self {
        let n = axis.norm();
        if n == 0.0 || theta == 0.0 {
            return Self::zero();
        }
        Self {
            theta,
            axis: axis / n,
        }
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.axis * self.theta
    }
}

pub fn quat_to_axis_angle(q: &UnitQuaternion) -> AxisAngle {
    q.to_axis_angle()
}

pub fn axis_angle_to_quat(aa: &AxisAngle) -> UnitQuaternion {
    UnitQuaternion::from_axis_angle(aa)
}

/// Rigid transform `a_T_b`: rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: UnitQuaternion) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn compose(&self, rhs: &Self) -> Self {
        compose(self, rhs)
    }

    pub fn inverse(&self) -> Self {
        inverse(self)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation.to_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Builds from a homogeneous matrix whose rotation block is already a
    /// proper rotation (no orthonormality check is done here).
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        Self::new(
            UnitQuaternion::from_matrix(&r),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }
}

/// `a * b` as homogeneous transforms.
pub fn compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    PoseSE3 {
        rotation: a.rotation.mul(&b.rotation),
        translation: a.rotation.rotate(&b.translation) + a.translation,
    }
}

pub fn inverse(a: &PoseSE3) -> PoseSE3 {
    let rotation = a.rotation.conjugate();
    PoseSE3 {
        rotation,
        translation: -rotation.rotate(&a.translation),
    }
}

/// Pose of `to_world` expressed in the frame of `from_world`:
/// given `O_T_c` and `O_T_c*`, returns `c_T_c*`.
pub fn relative(from_world: &PoseSE3, to_world: &PoseSE3) -> PoseSE3 {
    compose(&inverse(from_world), to_world)
}

/// Translation plus canonical unit quaternion, the regression target `[x, q]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseVector {
    pub x: Vector3<f64>,
    pub q: UnitQuaternion,
}

impl PoseVector {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Validates and canonicalizes raw components.
    pub fn from_raw(x: [f64; 3], q: [f64; 4]) -> Result<Self, PoseError> {
        if x.iter().any(|c| !c.is_finite()) {
            return Err(PoseError::NonFinite("translation"));
        }
        Ok(Self {
            x: Vector3::from(x),
            q: UnitQuaternion::canonicalize(q)?,
        })
    }

    pub fn from_pose(p: &PoseSE3) -> Self {
        Self {
            x: p.translation,
            q: p.rotation,
        }
    }

    pub fn as_pose(&self) -> PoseSE3 {
        PoseSE3::new(self.q, self.x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    #[test]
    fn compose_translation_then_rotation() {
        let a = PoseSE3::from_translation(1.0, 0.0, 0.0);
        let b = PoseSE3::from_rotation(UnitQuaternion::rot_z(FRAC_PI_2));
        let c = compose(&a, &b);
        assert_abs_diff_eq!(c.rotation.angle(), FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(c.rotation.z(), FRAC_PI_4.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.translation, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn compose_rotation_then_translation() {
        let a = PoseSE3::from_rotation(UnitQuaternion::rot_z(FRAC_PI_2));
        let b = PoseSE3::from_translation(1.0, 0.0, 0.0);
        let c = compose(&a, &b);
        assert_abs_diff_eq!(c.rotation.z(), FRAC_PI_4.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.translation, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn inverse_of_identity_and_translation() {
        assert_eq!(inverse(&PoseSE3::identity()), PoseSE3::identity());
        let t = inverse(&PoseSE3::from_translation(1.0, 2.0, 3.0));
        assert_eq!(t.rotation, UnitQuaternion::identity());
        assert_abs_diff_eq!(t.translation, Vector3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn relative_edge_cases() {
        let x = PoseSE3::new(
            UnitQuaternion::from_euler_xyz(0.1, -0.2, 0.3),
            Vector3::new(0.5, -1.0, 2.0),
        );
        let r = relative(&PoseSE3::identity(), &x);
        assert_abs_diff_eq!(r.translation, x.translation, epsilon = 1e-15);
        assert_eq!(r.rotation, x.rotation);
        let same = relative(&x, &x);
        assert!(same.rotation.angle() < 1e-15);
        assert!(same.translation.norm() < 1e-15);
    }

    #[test]
    fn axis_angle_of_identity_uses_x_axis() {
        let aa = quat_to_axis_angle(&UnitQuaternion::identity());
        assert_eq!(aa.theta, 0.0);
        assert_eq!(aa.axis, Vector3::x());
    }

    #[test]
    fn axis_angle_of_quarter_turn_about_z() {
        let q = UnitQuaternion::canonicalize([FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin()]).unwrap();
        let aa = quat_to_axis_angle(&q);
        assert_abs_diff_eq!(aa.theta, FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(aa.axis, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn axis_angle_to_quat_examples() {
        let q = axis_angle_to_quat(&AxisAngle::new(0.0, Vector3::new(0.3, 0.2, 0.1)));
        assert_eq!(q, UnitQuaternion::identity());
        let q = axis_angle_to_quat(&AxisAngle::new(PI, Vector3::z()));
        assert_abs_diff_eq!(q.w(), 0.0, epsilon = 1e-16);
        assert_eq!(q.z(), 1.0);
        assert_eq!((q.x(), q.y()), (0.0, 0.0));
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(
            UnitQuaternion::canonicalize([2.0, 0.0, 0.0, 0.0]).unwrap(),
            UnitQuaternion::identity()
        );
        let (c, s) = (FRAC_PI_4.cos(), FRAC_PI_4.sin());
        let q = UnitQuaternion::canonicalize([-c, 0.0, 0.0, -s]).unwrap();
        assert_abs_diff_eq!(q.w(), c, epsilon = 1e-15);
        assert_abs_diff_eq!(q.z(), s, epsilon = 1e-15);
        assert!(matches!(
            UnitQuaternion::canonicalize([0.0; 4]),
            Err(PoseError::ZeroQuaternion(_))
        ));
    }

    #[test]
    fn canonical_sign_when_scalar_is_zero() {
        let q = UnitQuaternion::canonicalize([0.0, 0.0, -1.0, 0.5]).unwrap();
        assert_eq!(q.w(), 0.0);
        assert!(q.y() > 0.0 && q.z() < 0.0);
        let q = UnitQuaternion::canonicalize([0.0, 0.0, 0.0, -3.0]).unwrap();
        assert_eq!(q.to_array(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(UnitQuaternion::canonicalize([f64::NAN, 0.0, 0.0, 1.0]).is_err());
        assert!(PoseVector::from_raw([f64::INFINITY, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn small_angle_exp_log() {
        let v = Vector3::new(1e-9, -2e-9, 3e-10);
        let q = UnitQuaternion::exp(&v);
        assert_abs_diff_eq!(q.log(), v, epsilon = 1e-22);
        assert_eq!(UnitQuaternion::exp(&Vector3::zeros()), UnitQuaternion::identity());
    }

    #[test]
    fn euler_round_trips() {
        let q = UnitQuaternion::from_euler_xyz(0.1, 0.2, -0.3);
        let (a, b, c) = q.to_euler_xyz();
        assert_abs_diff_eq!(a, 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(b, 0.2, epsilon = 1e-14);
        assert_abs_diff_eq!(c, -0.3, epsilon = 1e-14);
        let q = UnitQuaternion::from_euler_zyx(0.4, -0.05, 0.07);
        let (y, p, r) = q.to_euler_zyx();
        assert_abs_diff_eq!(y, 0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(p, -0.05, epsilon = 1e-14);
        assert_abs_diff_eq!(r, 0.07, epsilon = 1e-14);
    }

    #[test]
    fn matrix_round_trip_near_half_turn() {
        let q = UnitQuaternion::exp(&(Vector3::new(0.3, -0.9, 0.2).normalize() * (PI - 1e-6)));
        let back = UnitQuaternion::from_matrix(&q.to_matrix());
        assert!(back.mul(&q.conjugate()).angle() < 1e-12);
    }
}
