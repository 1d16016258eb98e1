//! Closed-loop servoing simulation and batch benchmarks.
//!
//! Each iteration measures the true error, asks the estimator for
//! `c_T_c*`, turns it into a twist and integrates the camera pose:
//!
//! ```text
//! p' = p + R v dt        (camera-frame velocity rotated to world)
//! R' = R Exp(w dt)       (body-frame rotation update)
//! ```
//!
//! With an exact estimator this makes both the translation and rotation
//! errors shrink by exactly `1 - lambda dt` per step, and keeps `c*_t_c` on
//! a fixed ray.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControlConfig, DofMode, Twist, VelocityClamp};
use crate::estimator::{
    EstimatorError, EstimatorKind, ExternalClient, ImageEstimator, NoiseModel, OracleEstimator,
    RelativePoseEstimator,
};
use crate::pose::{relative, PoseSE3, UnitQuaternion};
use crate::rng::{derive_seed, SimRng};
use crate::scene::{CameraIntrinsics, SceneError, SceneSpec};

pub const DEFAULT_TOL_T_MM: f64 = 1.0;
pub const DEFAULT_TOL_R_DEG: f64 = 0.05;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_DT: f64 = 0.1;
/// `lambda * dt = 0.05` with the default step.
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ServoError {
    #[error("invalid servo configuration: {0}")]
    InvalidConfig(String),
    #[error("estimator failed to start: {0}")]
    EstimatorStart(#[source] EstimatorError),
    #[error("estimator failed at iteration {iter}: {source}")]
    Estimator {
        iter: usize,
        #[source]
        source: EstimatorError,
    },
    #[error("trajectory is degenerate: {0}")]
    DegenerateTrajectory(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl ServoError {
    pub fn is_estimator_failure(&self) -> bool {
        matches!(self, ServoError::EstimatorStart(_) | ServoError::Estimator { .. })
    }
}

/// What an image-based estimator looks at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSetup {
    pub scene: SceneSpec,
    pub intrinsics: CameraIntrinsics,
    pub splat_radius: u32,
}

impl Default for RenderSetup {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            intrinsics: CameraIntrinsics::default(),
            splat_radius: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    pub initial_pose: PoseSE3,
    pub desired_pose: PoseSE3,
    pub control: ControlConfig,
    pub estimator: EstimatorKind,
    pub dt: f64,
    pub max_iters: usize,
    pub tol_t_mm: f64,
    pub tol_r_deg: f64,
    pub render: RenderSetup,
}

impl ServoConfig {
    /// Noise-free six-DOF defaults between two poses.
    pub fn new(initial_pose: PoseSE3, desired_pose: PoseSE3) -> Self {
        Self {
            initial_pose,
            desired_pose,
            control: ControlConfig::new(DEFAULT_LAMBDA, DofMode::Six),
            estimator: EstimatorKind::Oracle {
                noise: NoiseModel::none(),
            },
            dt: DEFAULT_DT,
            max_iters: DEFAULT_MAX_ITERS,
            tol_t_mm: DEFAULT_TOL_T_MM,
            tol_r_deg: DEFAULT_TOL_R_DEG,
            render: RenderSetup::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ServoError> {
        let bad = |m: String| Err(ServoError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.tol_t_mm > 0.0 && self.tol_r_deg > 0.0) {
            return bad("tolerances must be positive".into());
        }
        self.control.validate().map_err(ServoError::InvalidConfig)?;
        if !(self.control.lambda * self.dt < 1.0) {
            return bad(format!(
                "lambda * dt must be below 1, got {}",
                self.control.lambda * self.dt
            ));
        }
        self.estimator.validate().map_err(ServoError::InvalidConfig)?;
        self.render.intrinsics.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Camera pose in the world before this iteration's step.
    pub pose: PoseSE3,
    /// Command computed at `pose` (not executed on the converged record).
    pub twist: Twist,
    pub t_err_mm: f64,
    pub r_err_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoRun {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub iters_used: usize,
    pub tol_t_mm: f64,
    pub tol_r_deg: f64,
}

impl ServoRun {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn final_errors(&self) -> (f64, f64) {
        self.final_record()
            .map(|r| (r.t_err_mm, r.r_err_deg))
            .unwrap_or((f64::NAN, f64::NAN))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let q = r.pose.rotation.to_array();
            let t = r.pose.translation;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iter, t.x, t.y, t.z, q[0], q[1], q[2], q[3], r.twist.v.x, r.twist.v.y, r.twist.v.z,
                r.twist.w.x, r.twist.w.y, r.twist.w.z, r.t_err_mm, r.r_err_deg
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

pub const CSV_HEADER: &str =
    "iter,tx,ty,tz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,t_err_mm,r_err_deg";

/// Translation error (mm) and rotation error (deg) of `pose` w.r.t. `desired`.
pub fn pose_errors(pose: &PoseSE3, desired: &PoseSE3) -> (f64, f64) {
    let rel = relative(pose, desired);
    (1000.0 * rel.translation.norm(), rel.rotation.angle().to_degrees())
}

/// Roll and pitch (degrees) of `c_R_c*` in the yaw-pitch-roll decomposition.
/// Yaw-only commands leave both unchanged.
pub fn roll_pitch_deg(pose: &PoseSE3, desired: &PoseSE3) -> (f64, f64) {
    let (_, pitch, roll) = relative(pose, desired).rotation.to_euler_zyx();
    (roll.to_degrees(), pitch.to_degrees())
}

/// One explicit step: body-frame Euler on translation, exact rotation exponential.
pub fn integrate_step(pose: &PoseSE3, t: &Twist, dt: f64) -> PoseSE3 {
    PoseSE3 {
        rotation: pose.rotation.mul(&UnitQuaternion::exp(&(t.w * dt))),
        translation: pose.translation + pose.rotation.rotate(&(t.v * dt)),
    }
}

/// Runs the loop with a caller-supplied estimator.
pub fn run_with(cfg: &ServoConfig, estimator: &mut dyn RelativePoseEstimator) -> Result<ServoRun, ServoError> {
    cfg.validate()?;
    let mut pose = cfg.initial_pose;
    let mut records = Vec::with_capacity(cfg.max_iters.min(4096));
    let mut converged = false;
    for iter in 0..cfg.max_iters {
        let (t_err_mm, r_err_deg) = pose_errors(&pose, &cfg.desired_pose);
        let estimate = estimator
            .estimate(&pose, &cfg.desired_pose)
            .map_err(|source| ServoError::Estimator { iter, source })?;
        let twist = cfg.control.command(&estimate);
        records.push(IterationRecord {
            iter,
            pose,
            twist,
            t_err_mm,
            r_err_deg,
        });
        if t_err_mm <= cfg.tol_t_mm && r_err_deg <= cfg.tol_r_deg {
            converged = true;
            break;
        }
        pose = integrate_step(&pose, &twist, cfg.dt);
    }
    Ok(ServoRun {
        iters_used: records.len(),
        records,
        converged,
        tol_t_mm: cfg.tol_t_mm,
        tol_r_deg: cfg.tol_r_deg,
    })
}

/// Runs the loop with the estimator named in the configuration.
pub fn run(cfg: &ServoConfig) -> Result<ServoRun, ServoError> {
    cfg.validate()?;
    match &cfg.estimator {
        EstimatorKind::Oracle { noise } => run_with(cfg, &mut OracleEstimator::new(*noise)),
        EstimatorKind::External { command, timeout_s } => {
            let client = ExternalClient::spawn(command, Duration::from_secs_f64(*timeout_s))
                .map_err(ServoError::EstimatorStart)?;
            let scene = cfg.render.scene.generate()?;
            let mut est = ImageEstimator::new(client, scene, cfg.render.intrinsics, cfg.render.splat_radius);
            run_with(cfg, &mut est)
        }
    }
}

/// Largest angle (degrees) between `c*_t_c` at any iteration and at the start.
pub fn straightness(run: &ServoRun, desired: &PoseSE3) -> Result<f64, ServoError> {
    let first = run
        .records
        .first()
        .ok_or_else(|| ServoError::DegenerateTrajectory("run has no iterations".into()))?;
    if run.records.len() < 2 {
        return Err(ServoError::DegenerateTrajectory("run has a single iteration".into()));
    }
    if first.t_err_mm <= run.tol_t_mm {
        return Err(ServoError::DegenerateTrajectory(format!(
            "initial translation error {} mm is already within tolerance",
            first.t_err_mm
        )));
    }
    let dir0 = relative(desired, &first.pose).translation.normalize();
    let mut worst: f64 = 0.0;
    for r in &run.records[1..] {
        let t = relative(desired, &r.pose).translation;
        if t.norm() == 0.0 {
            continue;
        }
        let d = t.normalize();
        worst = worst.max(d.cross(&dir0).norm().atan2(d.dot(&dir0)));
    }
    Ok(worst.to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EulerOrder {
    /// Intrinsic X-Y-Z: `Rx(a) Ry(b) Rz(c)`.
    Xyz,
    /// Intrinsic Z-Y-X, angles given as (yaw, pitch, roll).
    Zyx,
}

/// Initial pose of the desired camera frame seen from the start frame (`c_T_c*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub translation_mm: [f64; 3],
    pub rotation_deg: [f64; 3],
    pub order: EulerOrder,
}

impl Offset {
    pub fn zero() -> Self {
        Self {
            translation_mm: [0.0; 3],
            rotation_deg: [0.0; 3],
            order: EulerOrder::Xyz,
        }
    }

    pub fn rotation(&self) -> UnitQuaternion {
        let [a, b, c] = self.rotation_deg.map(f64::to_radians);
        match self.order {
            EulerOrder::Xyz => UnitQuaternion::from_euler_xyz(a, b, c),
            EulerOrder::Zyx => UnitQuaternion::from_euler_zyx(a, b, c),
        }
    }

    pub fn pose(&self) -> PoseSE3 {
        PoseSE3::new(
            self.rotation(),
            nalgebra::Vector3::from(self.translation_mm.map(|c| c * 1e-3)),
        )
    }

    /// Start pose that sees `desired` at this offset.
    pub fn initial_pose(&self, desired: &PoseSE3) -> PoseSE3 {
        initial_from_offset(desired, &self.pose())
    }
}

pub fn initial_from_offset(desired: &PoseSE3, offset: &PoseSE3) -> PoseSE3 {
    desired.compose(&offset.inverse())
}

/// The positioning offset of the house-scene experiment: 91.4, 92.3,
/// 36.7 mm and 8, 10, -5 degrees (intrinsic XYZ).
pub fn house_offset() -> Offset {
    Offset {
        translation_mm: [91.4, 92.3, 36.7],
        rotation_deg: [8.0, 10.0, -5.0],
        order: EulerOrder::Xyz,
    }
}

/// Desired camera pose used by all presets: 1.5 m in front of the scene, looking along +z.
pub fn default_desired_pose() -> PoseSE3 {
    PoseSE3::from_translation(0.0, 0.0, -1.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OffsetSampler {
    Fixed(Offset),
    /// Translation uniform in a ball, rotation angle uniform up to the bound
    /// about a uniform axis (or about z only when `yaw_only`).
    Uniform {
        max_translation_mm: f64,
        max_rotation_deg: f64,
        yaw_only: bool,
    },
}

impl OffsetSampler {
    pub fn sample(&self, rng: &mut SimRng) -> PoseSE3 {
        match self {
            OffsetSampler::Fixed(o) => o.pose(),
            OffsetSampler::Uniform {
                max_translation_mm,
                max_rotation_deg,
                yaw_only,
            } => {
                let r = max_translation_mm * 1e-3 * rng.next_f64().cbrt();
                let t = rng.unit_vector() * r;
                let max_r = max_rotation_deg.to_radians();
                let q = if *yaw_only {
                    UnitQuaternion::rot_z(rng.uniform(-max_r, max_r))
                } else {
                    UnitQuaternion::exp(&(rng.unit_vector() * rng.uniform(0.0, max_r)))
                };
                PoseSE3::new(q, t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub control: ControlConfig,
    pub rel_sigma_t: f64,
    pub rel_sigma_r: f64,
    pub dt: f64,
    pub max_iters: usize,
    pub tol_t_mm: f64,
    pub tol_r_deg: f64,
    pub desired_pose: PoseSE3,
    pub offset: OffsetSampler,
}

impl Preset {
    fn base(name: &str, description: &str, offset: OffsetSampler, sigma: f64) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            control: ControlConfig::new(DEFAULT_LAMBDA, DofMode::Six),
            rel_sigma_t: sigma,
            rel_sigma_r: sigma,
            dt: DEFAULT_DT,
            max_iters: DEFAULT_MAX_ITERS,
            tol_t_mm: DEFAULT_TOL_T_MM,
            tol_r_deg: DEFAULT_TOL_R_DEG,
            desired_pose: default_desired_pose(),
            offset,
        }
    }

    fn four_dof(mut self) -> Self {
        self.control = ControlConfig {
            lambda: DEFAULT_LAMBDA,
            dof_mode: DofMode::Four,
            clamp: Some(VelocityClamp { max_v: 0.5, max_w: 0.5 }),
        };
        self
    }

    /// Servo configuration for one trial with the given start offset and noise seed.
    pub fn config(&self, offset: &PoseSE3, noise_seed: u64) -> ServoConfig {
        ServoConfig {
            initial_pose: initial_from_offset(&self.desired_pose, offset),
            desired_pose: self.desired_pose,
            control: self.control,
            estimator: EstimatorKind::Oracle {
                noise: NoiseModel::new(self.rel_sigma_t, self.rel_sigma_r, noise_seed),
            },
            dt: self.dt,
            max_iters: self.max_iters,
            tol_t_mm: self.tol_t_mm,
            tol_r_deg: self.tol_r_deg,
            render: RenderSetup::default(),
        }
    }

    /// Configuration of trial `index` under master `seed`.
    pub fn trial_config(&self, seed: u64, index: u64) -> ServoConfig {
        let trial_seed = derive_seed(seed, index);
        let mut rng = SimRng::new(trial_seed);
        let offset = self.offset.sample(&mut rng);
        self.config(&offset, derive_seed(trial_seed, u64::MAX))
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "paper-sec7-noisefree",
    "paper-sec7-noisy",
    "random-noisefree",
    "random-noisy",
    "quadrotor-4dof",
    "quadrotor-4dof-tilted",
];

pub fn preset(name: &str) -> Option<Preset> {
    let random = OffsetSampler::Uniform {
        max_translation_mm: 150.0,
        max_rotation_deg: 15.0,
        yaw_only: false,
    };
    let p = match name {
        "paper-sec7-noisefree" => Preset::base(
            name,
            "house-scene offset, exact estimator",
            OffsetSampler::Fixed(house_offset()),
            0.0,
        ),
        "paper-sec7-noisy" => Preset::base(
            name,
            "house-scene offset, estimator with 5% multiplicative noise",
            OffsetSampler::Fixed(house_offset()),
            0.05,
        ),
        "random-noisefree" => Preset::base(name, "random offsets up to 150 mm / 15 deg, exact estimator", random, 0.0),
        "random-noisy" => Preset::base(
            name,
            "random offsets up to 150 mm / 15 deg, 5% multiplicative noise",
            random,
            0.05,
        ),
        "quadrotor-4dof" => Preset::base(
            name,
            "x, y, z, yaw offsets up to 150 mm / 15 deg, 4-DOF control, 5% noise",
            OffsetSampler::Uniform {
                max_translation_mm: 150.0,
                max_rotation_deg: 15.0,
                yaw_only: true,
            },
            0.05,
        )
        .four_dof(),
        "quadrotor-4dof-tilted" => Preset::base(
            name,
            "4-DOF control from a start with 5 deg roll and pitch error",
            OffsetSampler::Fixed(Offset {
                translation_mm: [60.0, -40.0, 30.0],
                rotation_deg: [10.0, 5.0, 5.0],
                order: EulerOrder::Zyx,
            }),
            0.0,
        )
        .four_dof(),
        _ => return None,
    };
    Some(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub trials: usize,
    pub converged: usize,
    pub rate: f64,
    pub med_t_err_mm: f64,
    pub med_r_err_deg: f64,
    pub med_iters: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub converged: bool,
    pub iters_used: usize,
    pub initial_t_err_mm: f64,
    pub initial_r_err_deg: f64,
    pub final_t_err_mm: f64,
    pub final_r_err_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub summary: BenchmarkSummary,
    pub outcomes: Vec<TrialOutcome>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs `n_trials` independent trials of `preset` (in parallel) and summarizes them.
pub fn benchmark(preset: &Preset, n_trials: usize, seed: u64) -> Result<Benchmark, ServoError> {
    if n_trials == 0 {
        return Err(ServoError::InvalidConfig("n_trials must be at least 1".into()));
    }
    let outcomes = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let cfg = preset.trial_config(seed, i as u64);
            let run = run(&cfg)?;
            let first = run.records[0];
            let (final_t_err_mm, final_r_err_deg) = run.final_errors();
            Ok(TrialOutcome {
                index: i,
                converged: run.converged,
                iters_used: run.iters_used,
                initial_t_err_mm: first.t_err_mm,
                initial_r_err_deg: first.r_err_deg,
                final_t_err_mm,
                final_r_err_deg,
            })
        })
        .collect::<Result<Vec<_>, ServoError>>()?;
    let converged = outcomes.iter().filter(|o| o.converged).count();
    let pick = |f: fn(&TrialOutcome) -> f64| median(&mut outcomes.iter().map(f).collect::<Vec<_>>());
    let summary = BenchmarkSummary {
        trials: n_trials,
        converged,
        rate: converged as f64 / n_trials as f64,
        med_t_err_mm: pick(|o| o.final_t_err_mm),
        med_r_err_deg: pick(|o| o.final_r_err_deg),
        med_iters: pick(|o| o.iters_used as f64),
    };
    Ok(Benchmark { summary, outcomes })
}
