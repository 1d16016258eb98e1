//! JSON configuration shared by every subcommand.
//!
//! All sections are optional. Servo settings resolve in three layers:
//! built-in defaults, then the named preset (if any), then explicit fields.
//! The fully resolved form is echoed to `resolved_config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use servobench_core::controller::{ControlConfig, DofMode, VelocityClamp};
use servobench_core::dataset::SyntheticTrajectory;
use servobench_core::estimator::{EstimatorKind, NoiseModel};
use servobench_core::pose::PoseSE3;
use servobench_core::scene::{CameraIntrinsics, SceneSpec};
use servobench_core::servo::{self, default_desired_pose, Offset, RenderSetup, ServoConfig};

use crate::CliError;

pub const ESTIMATOR_ENV: &str = "SERVOBENCH_ESTIMATOR";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub camera: Option<CameraIntrinsics>,
    pub splat_radius: Option<u32>,
    pub scene: Option<SceneSpec>,
    pub dataset: DatasetSection,
    pub servo: ServoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectorySource {
    Synthetic(SyntheticTrajectory),
    /// Directory of `frame-NNNNNN.pose.txt` files.
    Dir(PathBuf),
}

impl Default for TrajectorySource {
    fn default() -> Self {
        TrajectorySource::Synthetic(SyntheticTrajectory::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub window: usize,
    pub trajectory: TrajectorySource,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            window: 10,
            trajectory: TrajectorySource::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoSection {
    pub preset: Option<String>,
    pub desired_pose: Option<PoseSE3>,
    /// Start offset; the initial pose is derived from it and the desired pose.
    pub offset: Option<Offset>,
    pub lambda: Option<f64>,
    pub dt: Option<f64>,
    pub dof: Option<DofMode>,
    pub clamp: Option<VelocityClamp>,
    pub max_iters: Option<usize>,
    pub tol_t_mm: Option<f64>,
    pub tol_r_deg: Option<f64>,
    pub estimator: Option<EstimatorKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub camera: CameraIntrinsics,
    pub splat_radius: u32,
    pub scene: SceneSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub servo: Option<ResolvedServo>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedServo {
    pub preset: Option<String>,
    pub offset: Offset,
    pub config: ServoConfig,
}

pub fn load(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("config not found: {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

impl FileConfig {
    pub fn camera(&self) -> CameraIntrinsics {
        self.camera.unwrap_or_default()
    }

    pub fn render(&self) -> RenderSetup {
        RenderSetup {
            scene: self.scene.unwrap_or_default(),
            intrinsics: self.camera(),
            splat_radius: self.splat_radius.unwrap_or(1),
        }
    }

    pub fn validate_render(&self) -> Result<(), CliError> {
        let r = self.render();
        r.intrinsics.validate().map_err(|e| CliError::usage(e.to_string()))?;
        if r.scene.n_points == 0 || !(r.scene.extent > 0.0) {
            return Err(CliError::usage("scene needs n_points >= 1 and extent > 0"));
        }
        Ok(())
    }

    /// Resolves the servo section; `estimator_env` overrides an external command line.
    pub fn resolve_servo(&self, noise_seed: Option<u64>, estimator_env: Option<&str>) -> Result<ResolvedServo, CliError> {
        let s = &self.servo;
        let base = match &s.preset {
            Some(name) => Some(servo::preset(name).ok_or_else(|| unknown_preset(name))?),
            None => None,
        };
        let desired = s
            .desired_pose
            .or(base.as_ref().map(|p| p.desired_pose))
            .unwrap_or_else(default_desired_pose);
        let offset = match (s.offset, &base) {
            (Some(o), _) => o,
            (None, Some(p)) => match p.offset {
                servo::OffsetSampler::Fixed(o) => o,
                servo::OffsetSampler::Uniform { .. } => {
                    return Err(CliError::usage(format!(
                        "preset {:?} samples random offsets; give servo.offset or use `bench`",
                        p.name
                    )))
                }
            },
            (None, None) => Offset::zero(),
        };
        let mut cfg = match &base {
            Some(p) => p.config(&offset.pose(), 0),
            None => ServoConfig::new(offset.initial_pose(&desired), desired),
        };
        cfg.desired_pose = desired;
        cfg.initial_pose = offset.initial_pose(&desired);
        let control = cfg.control;
        cfg.control = ControlConfig {
            lambda: s.lambda.unwrap_or(control.lambda),
            dof_mode: s.dof.unwrap_or(control.dof_mode),
            clamp: s.clamp.or(control.clamp),
        };
        cfg.dt = s.dt.unwrap_or(cfg.dt);
        cfg.max_iters = s.max_iters.unwrap_or(cfg.max_iters);
        cfg.tol_t_mm = s.tol_t_mm.unwrap_or(cfg.tol_t_mm);
        cfg.tol_r_deg = s.tol_r_deg.unwrap_or(cfg.tol_r_deg);
        if let Some(e) = &s.estimator {
            cfg.estimator = e.clone();
        }
        match &mut cfg.estimator {
            EstimatorKind::Oracle { noise } => {
                if let Some(seed) = noise_seed {
                    *noise = NoiseModel { seed, ..*noise };
                }
            }
            EstimatorKind::External { command, .. } => {
                if let Some(line) = estimator_env {
                    *command = shlex::split(line)
                        .ok_or_else(|| CliError::usage(format!("cannot parse {ESTIMATOR_ENV}={line:?}")))?;
                }
            }
        }
        cfg.render = self.render();
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(ResolvedServo {
            preset: s.preset.clone(),
            offset,
            config: cfg,
        })
    }
}

pub fn unknown_preset(name: &str) -> CliError {
    CliError::usage(format!(
        "unknown preset {name:?}; known presets: {}",
        servo::PRESET_NAMES.join(", ")
    ))
}

pub fn echo(out_dir: &Path, resolved: &ResolvedConfig) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(resolved).expect("config serializes");
    fs::write(out_dir.join(RESOLVED_CONFIG_FILE), text + "\n").map_err(CliError::io)
}
