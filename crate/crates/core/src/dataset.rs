//! Relative-pose training pairs from camera trajectories.
//!
//! Trajectories use the 7-Scenes on-disk layout: one `frame-NNNNNN.pose.txt`
//! per frame holding the row-major 4x4 camera-to-world matrix `O_T_c`.
//! Pairs are ordered `(i, j)` with `0 < |i - j| <= window` over trajectory
//! indices, and the target is `c_i T c_j`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{relative, PoseSE3, PoseVector, UnitQuaternion};
use crate::rng::SimRng;
use crate::scene::{render, CameraIntrinsics, PointScene};

/// Largest `||R^T R - I||_inf` that is repaired rather than rejected.
pub const ORTHONORMAL_TOL: f64 = 1e-3;
const BOTTOM_ROW_TOL: f64 = 1e-9;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: rotation block is not orthonormal (deviation {deviation:e})")]
    NonRigidPose { path: PathBuf, deviation: f64 },
    #[error("no frame-*.pose.txt files in {0}")]
    EmptyTrajectory(PathBuf),
    #[error("frame {0} is missing from the sequence")]
    MissingFrame(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub id: u64,
    /// Camera pose in the world frame (`O_T_c`).
    pub pose: PoseSE3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    frames: Vec<Frame>,
}

impl Trajectory {
    /// Frame ids must be strictly increasing and at least one frame given.
    pub fn new(frames: Vec<Frame>) -> Result<Self, DatasetError> {
        if frames.is_empty() {
            return Err(DatasetError::InvalidArgument("trajectory needs at least one frame".into()));
        }
        if frames.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(DatasetError::InvalidArgument("frame ids must be strictly increasing".into()));
        }
        Ok(Self { frames })
    }

    /// Frames numbered `0..poses.len()`.
    pub fn from_poses(poses: impl IntoIterator<Item = PoseSE3>) -> Result<Self, DatasetError> {
        Self::new(
            poses
                .into_iter()
                .enumerate()
                .map(|(i, pose)| Frame { id: i as u64, pose })
                .collect(),
        )
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    pub id_current: u64,
    pub id_desired: u64,
    /// Desired camera frame expressed in the current one.
    pub ground_truth: PoseVector,
}

pub fn pose_file_name(id: u64) -> String {
    format!("frame-{id:06}.pose.txt")
}

pub fn image_file_name(id: u64) -> String {
    format!("frame-{id:06}.ppm")
}

fn parse_frame_id(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("frame-")?.strip_suffix(".pose.txt")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses one 4x4 pose file, repairing small orthonormality drift.
pub fn parse_pose_file(path: &Path, text: &str) -> Result<PoseSE3, DatasetError> {
    let parse_err = |msg: String| DatasetError::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| parse_err(format!("not a number: {t:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != 16 {
        return Err(parse_err(format!("expected 16 values, found {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(parse_err("non-finite value".into()));
    }
    let m = Matrix4::from_row_slice(&values);
    let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0];
    if bottom.iter().any(|v| v.abs() > BOTTOM_ROW_TOL) {
        return Err(parse_err(format!("bottom row is not (0 0 0 1): {:?}", m.row(3))));
    }
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let deviation = (r.transpose() * r - Matrix3::identity()).amax();
    if !(deviation < ORTHONORMAL_TOL) || r.determinant() <= 0.0 {
        return Err(DatasetError::NonRigidPose {
            path: path.to_path_buf(),
            deviation,
        });
    }
    Ok(PoseSE3::new(
        UnitQuaternion::from_matrix(&nearest_rotation(&r)),
        m.fixed_view::<3, 1>(0, 3).into_owned(),
    ))
}

/// Closest rotation in the Frobenius sense (polar factor via SVD).
fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut fixed = u * v_t;
    if fixed.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        fixed = u * d * v_t;
    }
    fixed
}

/// Loads every `frame-NNNNNN.pose.txt` in `dir`, ordered by frame number.
/// Numbering gaps are errors.
pub fn load_trajectory(dir: &Path) -> Result<Trajectory, DatasetError> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if let Some(id) = entry.file_name().to_str().and_then(parse_frame_id) {
            if files.insert(id, entry.path()).is_some() {
                return Err(DatasetError::Parse {
                    path: entry.path(),
                    msg: format!("duplicate frame number {id}"),
                });
            }
        }
    }
    let first = *files
        .keys()
        .next()
        .ok_or_else(|| DatasetError::EmptyTrajectory(dir.to_path_buf()))?;
    let mut frames = Vec::with_capacity(files.len());
    for (expected, (id, path)) in (first..).zip(files) {
        if id != expected {
            return Err(DatasetError::MissingFrame(expected));
        }
        let text = fs::read_to_string(&path)?;
        frames.push(Frame {
            id,
            pose: parse_pose_file(&path, &text)?,
        });
    }
    Trajectory::new(frames)
}

pub fn format_pose(pose: &PoseSE3) -> String {
    let m = pose.to_matrix();
    let mut out = String::new();
    for row in 0..4 {
        let cells: Vec<String> = (0..4).map(|c| format!("{:e}", m[(row, c)])).collect();
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
    out
}

/// Writes a trajectory in the layout [`load_trajectory`] reads.
pub fn write_trajectory(traj: &Trajectory, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    for f in traj.frames() {
        fs::write(dir.join(pose_file_name(f.id)), format_pose(&f.pose))?;
    }
    Ok(())
}

/// Ground-truth target for a pair: `c_i T c_j` as a pose vector.
pub fn pair_ground_truth(pose_i: &PoseSE3, pose_j: &PoseSE3) -> PoseVector {
    PoseVector::from_pose(&relative(pose_i, pose_j))
}

/// All ordered pairs within `window` trajectory positions, sorted by `(i, j)`.
pub fn sample_pairs(traj: &Trajectory, window: usize) -> Result<Vec<PairSample>, DatasetError> {
    if window == 0 {
        return Err(DatasetError::InvalidArgument("window must be at least 1".into()));
    }
    let frames = traj.frames();
    let n = frames.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n - 1);
        for j in (lo..=hi).filter(|j| *j != i) {
            pairs.push(PairSample {
                id_current: frames[i].id,
                id_desired: frames[j].id,
                ground_truth: pair_ground_truth(&frames[i].pose, &frames[j].pose),
            });
        }
    }
    Ok(pairs)
}

/// One manifest line. Field order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub cur: String,
    pub des: String,
    pub x: [f64; 3],
    pub q: [f64; 4],
}

impl ManifestRecord {
    pub fn pose_vector(&self) -> Result<PoseVector, crate::pose::PoseError> {
        PoseVector::from_raw(self.x, self.q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub images_written: usize,
}

/// Renders one image per frame and writes `manifest.jsonl` under `out_dir`.
pub fn export_dataset(
    traj: &Trajectory,
    scene: &PointScene,
    k: &CameraIntrinsics,
    splat_radius: u32,
    window: usize,
    out_dir: &Path,
) -> Result<Manifest, DatasetError> {
    k.validate().map_err(|e| DatasetError::InvalidArgument(e.to_string()))?;
    let pairs = sample_pairs(traj, window)?;
    let image_dir = out_dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir)?;

    let images: Vec<_> = traj
        .frames()
        .par_iter()
        .map(|f| (f.id, render(scene, &f.pose, k, splat_radius)))
        .collect();
    for (id, img) in &images {
        img.write_ppm(&image_dir.join(image_file_name(*id)))?;
    }

    let rel = |id: u64| format!("{IMAGE_DIR}/{}", image_file_name(id));
    let records: Vec<ManifestRecord> = pairs
        .iter()
        .map(|p| ManifestRecord {
            cur: rel(p.id_current),
            des: rel(p.id_desired),
            x: p.ground_truth.x.into(),
            q: p.ground_truth.q.to_array(),
        })
        .collect();
    let path = out_dir.join(MANIFEST_FILE);
    write_jsonl(&path, &records)?;
    Ok(Manifest {
        path,
        records,
        images_written: images.len(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, DatasetError> {
    let reader = io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", n + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Parameters of a seeded camera random walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTrajectory {
    pub frames: usize,
    pub seed: u64,
    /// Largest per-frame camera displacement, millimeters.
    pub step_mm: f64,
    /// Largest per-frame rotation, degrees.
    pub step_deg: f64,
}

impl Default for SyntheticTrajectory {
    fn default() -> Self {
        Self {
            frames: 50,
            seed: 0,
            step_mm: 20.0,
            step_deg: 2.0,
        }
    }
}

/// Random walk starting at `start`; each step is applied in the camera frame.
pub fn synthetic_trajectory(spec: &SyntheticTrajectory, start: &PoseSE3) -> Result<Trajectory, DatasetError> {
    if spec.frames == 0 {
        return Err(DatasetError::InvalidArgument("frames must be at least 1".into()));
    }
    if !(spec.step_mm >= 0.0 && spec.step_deg >= 0.0) {
        return Err(DatasetError::InvalidArgument("step sizes must be non-negative".into()));
    }
    let mut rng = SimRng::new(spec.seed);
    let mut pose = *start;
    let mut poses = Vec::with_capacity(spec.frames);
    poses.push(pose);
    for _ in 1..spec.frames {
        let t = rng.unit_vector() * rng.uniform(0.0, spec.step_mm * 1e-3);
        let r = rng.unit_vector() * rng.uniform(0.0, spec.step_deg.to_radians());
        let step = PoseSE3::new(UnitQuaternion::exp(&r), Vector3::from(t));
        pose = pose.compose(&step);
        poses.push(pose);
    }
    Trajectory::from_poses(poses)
}
