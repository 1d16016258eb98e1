//! Relative-pose estimators queried once per servo iteration.
//!
//! Every estimator reports `c_T_c*`, the desired camera frame expressed in
//! the current one. Two implementations exist:
//!
//! - the geometric oracle, exact up to an optional multiplicative noise law;
//! - [`ExternalClient`], a child process speaking the line-delimited JSON
//!   estimator protocol (version 1) on its standard streams:
//!
//! ```text
//! child -> {"v":1,"ready":true}                          (once, at startup)
//! host  -> {"v":1,"cur":"/abs/cur.ppm","des":"/abs/des.ppm"}
//! child -> {"v":1,"x":[x,y,z],"q":[w,qx,qy,qz]}         or {"v":1,"error":"..."}
//! ```

use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::pose::{relative, PoseSE3, PoseVector, UnitQuaternion};
use crate::rng::{derive_seed, SimRng};
use crate::scene::{render, CameraIntrinsics, Image, PointScene};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("failed to start estimator {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("estimator did not answer within {0:?}")]
    Timeout(Duration),
    #[error("estimator protocol error: {0}")]
    Protocol(String),
    #[error("estimator process is dead")]
    ProcessDead,
    #[error("estimator reported an error: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Multiplicative perturbation of the exact relative pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-axis translation std as a fraction of `||t||`.
    pub rel_sigma_t: f64,
    /// Rotation-angle std as a fraction of the current angle.
    pub rel_sigma_r: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(rel_sigma_t: f64, rel_sigma_r: f64, seed: u64) -> Self {
        Self {
            rel_sigma_t,
            rel_sigma_r,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rel_sigma_t >= 0.0 && self.rel_sigma_r >= 0.0 {
            Ok(())
        } else {
            Err(format!("noise sigmas must be non-negative, got {self:?}"))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rel_sigma_t == 0.0 && self.rel_sigma_r == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorKind {
    Oracle {
        #[serde(flatten)]
        noise: NoiseModel,
    },
    External {
        command: Vec<String>,
        timeout_s: f64,
    },
}

impl EstimatorKind {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            EstimatorKind::Oracle { noise } => noise.validate(),
            EstimatorKind::External { command, timeout_s } => {
                if command.is_empty() {
                    Err("external estimator command is empty".into())
                } else if !(*timeout_s > 0.0 && timeout_s.is_finite()) {
                    Err(format!("estimator timeout must be positive, got {timeout_s}"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Exact `c_T_c*` perturbed by `noise`, drawing from `rng`.
///
/// Translation gets an isotropic Gaussian with per-axis std
/// `rel_sigma_t * ||t||`; rotation is right-multiplied by a rotation about a
/// uniformly random axis by a Gaussian angle with std `rel_sigma_r * theta`.
/// The RNG is advanced by the same amount whether or not noise is active.
pub fn oracle_estimate(current: &PoseSE3, desired: &PoseSE3, noise: &NoiseModel, rng: &mut SimRng) -> PoseVector {
    let exact = PoseVector::from_pose(&relative(current, desired));
    let dt = Vector3::new(rng.gaussian(), rng.gaussian(), rng.gaussian());
    let axis = rng.unit_vector();
    let dtheta = rng.gaussian();
    if noise.is_zero() {
        return exact;
    }
    let x = exact.x + dt * (noise.rel_sigma_t * exact.x.norm());
    let angle = dtheta * noise.rel_sigma_r * exact.q.angle();
    let q = exact.q.mul(&UnitQuaternion::exp(&(axis * angle)));
    PoseVector { x, q }
}

/// Anything the servo loop can ask for `c_T_c*`.
pub trait RelativePoseEstimator {
    fn estimate(&mut self, current: &PoseSE3, desired: &PoseSE3) -> Result<PoseVector, EstimatorError>;
}

/// Oracle with one RNG stream per call, keyed by `(seed, call index)`.
#[derive(Debug, Clone)]
pub struct OracleEstimator {
    pub noise: NoiseModel,
    calls: u64,
}

impl OracleEstimator {
    pub fn new(noise: NoiseModel) -> Self {
        Self { noise, calls: 0 }
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

impl RelativePoseEstimator for OracleEstimator {
    fn estimate(&mut self, current: &PoseSE3, desired: &PoseSE3) -> Result<PoseVector, EstimatorError> {
        let mut rng = SimRng::new(derive_seed(self.noise.seed, self.calls));
        self.calls += 1;
        Ok(oracle_estimate(current, desired, &self.noise, &mut rng))
    }
}

#[derive(Serialize)]
struct Request<'a> {
    v: u64,
    cur: &'a str,
    des: &'a str,
}

/// Session with an external estimator process. One request in flight at a time.
pub struct ExternalClient {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<io::Result<String>>,
    timeout: Duration,
    workspace: tempfile::TempDir,
    dead: bool,
}

impl ExternalClient {
    /// Spawns `argv` and waits for the ready handshake.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self, EstimatorError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| EstimatorError::Protocol("empty estimator command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| EstimatorError::Spawn {
                command: argv.join(" "),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let workspace = tempfile::Builder::new().prefix("servobench-est-").tempdir()?;
        let mut client = Self {
            child,
            stdin,
            lines: rx,
            timeout,
            workspace,
            dead: false,
        };
        let hello = client.read_message()?;
        if hello.get("v").and_then(Value::as_u64) != Some(PROTOCOL_VERSION)
            || hello.get("ready").and_then(Value::as_bool) != Some(true)
        {
            client.kill();
            return Err(EstimatorError::Protocol(format!("bad handshake: {hello}")));
        }
        Ok(client)
    }

    pub fn workspace(&self) -> &std::path::Path {
        self.workspace.path()
    }

    /// Sends one image pair and parses the estimate (quaternion canonicalized).
    pub fn estimate_images(&mut self, current: &Image, desired: &Image) -> Result<PoseVector, EstimatorError> {
        if self.dead {
            return Err(EstimatorError::ProcessDead);
        }
        let cur = self.workspace.path().join("cur.ppm");
        let des = self.workspace.path().join("des.ppm");
        current.write_ppm(&cur)?;
        desired.write_ppm(&des)?;
        self.send(&cur, &des)?;
        let msg = self.read_message()?;
        parse_response(&msg)
    }

    fn send(&mut self, cur: &PathBuf, des: &PathBuf) -> Result<(), EstimatorError> {
        let line = serde_json::to_string(&Request {
            v: PROTOCOL_VERSION,
            cur: &cur.to_string_lossy(),
            des: &des.to_string_lossy(),
        })
        .expect("request serializes");
        let stdin = self.stdin.as_mut().ok_or(EstimatorError::ProcessDead)?;
        let written = stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush());
        if let Err(e) = written {
            self.kill();
            return Err(match e.kind() {
                io::ErrorKind::BrokenPipe => EstimatorError::ProcessDead,
                _ => EstimatorError::Io(e),
            });
        }
        Ok(())
    }

    fn read_message(&mut self) -> Result<Value, EstimatorError> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                self.kill();
                return Err(EstimatorError::Io(e));
            }
            Err(RecvTimeoutError::Timeout) => {
                // a late reply would desynchronize the session
                self.kill();
                return Err(EstimatorError::Timeout(self.timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.kill();
                return Err(EstimatorError::ProcessDead);
            }
        };
        serde_json::from_str(&line).map_err(|e| EstimatorError::Protocol(format!("{e}: {line:?}")))
    }

    fn kill(&mut self) {
        self.dead = true;
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ExternalClient {
    fn drop(&mut self) {
        if !self.dead {
            self.stdin = None;
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Parses one response object into a canonical estimate.
pub fn parse_response(msg: &Value) -> Result<PoseVector, EstimatorError> {
    let obj = msg
        .as_object()
        .ok_or_else(|| EstimatorError::Protocol(format!("response is not an object: {msg}")))?;
    if obj.get("v").and_then(Value::as_u64) != Some(PROTOCOL_VERSION) {
        return Err(EstimatorError::Protocol(format!("unsupported version in {msg}")));
    }
    if let Some(err) = obj.get("error") {
        return Err(EstimatorError::Remote(
            err.as_str().map(str::to_owned).unwrap_or_else(|| err.to_string()),
        ));
    }
    let x: [f64; 3] = numbers(obj.get("x"), "x")?;
    let q: [f64; 4] = numbers(obj.get("q"), "q")?;
    PoseVector::from_raw(x, q).map_err(|e| EstimatorError::Protocol(e.to_string()))
}

fn numbers<const N: usize>(v: Option<&Value>, field: &str) -> Result<[f64; N], EstimatorError> {
    let bad = || EstimatorError::Protocol(format!("field {field:?} must be an array of {N} numbers"));
    let arr = v.and_then(Value::as_array).ok_or_else(bad)?;
    if arr.len() != N {
        return Err(bad());
    }
    let mut out = [0.0; N];
    for (o, a) in out.iter_mut().zip(arr) {
        *o = a.as_f64().ok_or_else(bad)?;
    }
    Ok(out)
}

/// External estimator fed with images rendered from the simulated poses.
pub struct ImageEstimator {
    client: ExternalClient,
    scene: PointScene,
    intrinsics: CameraIntrinsics,
    splat_radius: u32,
    desired: Option<(PoseSE3, Image)>,
}

impl ImageEstimator {
    pub fn new(client: ExternalClient, scene: PointScene, intrinsics: CameraIntrinsics, splat_radius: u32) -> Self {
        Self {
            client,
            scene,
            intrinsics,
            splat_radius,
            desired: None,
        }
    }
}

impl RelativePoseEstimator for ImageEstimator {
    fn estimate(&mut self, current: &PoseSE3, desired: &PoseSE3) -> Result<PoseVector, EstimatorError> {
        let stale = self.desired.as_ref().is_none_or(|(p, _)| p != desired);
        if stale {
            let img = render(&self.scene, desired, &self.intrinsics, self.splat_radius);
            self.desired = Some((*desired, img));
        }
        let cur = render(&self.scene, current, &self.intrinsics, self.splat_radius);
        let (_, des) = self.desired.as_ref().expect("desired image rendered");
        self.client.estimate_images(&cur, des)
    }
}
