//! Simulation and benchmarking toolkit for position-based visual servoing
//! driven by a relative-pose estimator.
//!
//! - [`pose`]: SE(3) and quaternion algebra.
//! - [`scene`]: synthetic point scenes, pinhole projection, PPM images.
//! - [`dataset`]: trajectory ingestion, pair sampling, dataset export.
//! - [`loss`]: pose-regression loss and error metrics.
//! - [`estimator`]: geometric oracle and the external estimator protocol.
//! - [`controller`]: the decoupled PBVS control law.
//! - [`servo`]: closed-loop simulation, presets and benchmarks.

pub mod controller;
pub mod dataset;
pub mod estimator;
pub mod loss;
pub mod pose;
pub mod rng;
pub mod scene;
pub mod servo;

pub use controller::{pbvs_twist, project_4dof, ControlConfig, DofMode, Twist};
pub use pose::{compose, inverse, relative, AxisAngle, PoseError, PoseSE3, PoseVector, UnitQuaternion};
pub use servo::{benchmark, run, ServoConfig, ServoRun};
