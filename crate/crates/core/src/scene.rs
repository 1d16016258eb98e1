//! Synthetic point-splat scenes and a pinhole renderer.
//!
//! Rendering is integer-deterministic: projected pixel coordinates are
//! rounded half away from zero, splats are squares of side `2r + 1`, and a
//! depth buffer keeps the nearest point (first point wins exact ties).

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::PoseSE3;
use crate::rng::SimRng;

/// Points closer than this to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.05;
pub const BACKGROUND: [u8; 3] = [16, 16, 16];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed PPM: {0}")]
    BadPpm(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// 64x48 pixels, 60 px focal length, centered principal point.
    fn default() -> Self {
        Self {
            fx: 60.0,
            fy: 60.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, SceneError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(SceneError::InvalidArgument(format!(
                "intrinsics require fx, fy > 0 and a principal point inside the image, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    pub position: [f64; 3],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointScene {
    pub points: Vec<ScenePoint>,
    pub seed: u64,
    pub extent: f64,
}

/// Parameters for [`generate_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_points: usize,
    /// Cube side, meters.
    pub extent: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_points: 2000,
            extent: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn generate(&self) -> Result<PointScene, SceneError> {
        generate_scene(self.seed, self.n_points, self.extent)
    }
}

/// Uniform points in a cube of side `extent` centered on the origin.
///
/// Each point draws x, y, z then r, g, b from one [`SimRng`] stream; color
/// channels are `40 + (u64 % 216)` so no splat matches the background.
pub fn generate_scene(seed: u64, n_points: usize, extent: f64) -> Result<PointScene, SceneError> {
    if n_points == 0 {
        return Err(SceneError::InvalidArgument("n_points must be at least 1".into()));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(SceneError::InvalidArgument(format!("extent must be positive, got {extent}")));
    }
    let mut rng = SimRng::new(seed);
    let half = 0.5 * extent;
    let points = (0..n_points)
        .map(|_| {
            let position = [(); 3].map(|_| rng.uniform(-half, half));
            let color = [(); 3].map(|_| 40 + rng.below(216) as u8);
            ScenePoint { position, color }
        })
        .collect();
    Ok(PointScene {
        points,
        seed,
        extent,
    })
}

/// Projected pixel coordinates and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a world point through a camera at world pose `camera_pose` (`O_T_c`).
pub fn project(point: &Vector3<f64>, camera_pose: &PoseSE3, k: &CameraIntrinsics) -> Option<Projection> {
    let pc = camera_pose.inverse().transform_point(point);
    project_camera_frame(&pc, k)
}

fn project_camera_frame(pc: &Vector3<f64>, k: &CameraIntrinsics) -> Option<Projection> {
    if !(pc.z > NEAR_PLANE) {
        return None;
    }
    Some(Projection {
        u: k.fx * pc.x / pc.z + k.cx,
        v: k.fy * pc.y / pc.z + k.cy,
        depth: pc.z,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn pixel(&self, col: u32, row: u32) -> [u8; 3] {
        let i = 3 * (row as usize * self.width as usize + col as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set_pixel(&mut self, col: usize, row: usize, rgb: [u8; 3]) {
        let i = 3 * (row * self.width as usize + col);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, SceneError> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(SceneError::BadPpm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "P6" {
            return Err(SceneError::BadPpm(format!("magic {:?} is not P6", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| SceneError::BadPpm(format!("bad header number {s:?}")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(SceneError::BadPpm(format!("maxval {maxval} unsupported")));
        }
        let len = width as usize * height as usize * 3;
        if bytes.len() < pos || bytes.len() - pos != len {
            return Err(SceneError::BadPpm(format!(
                "expected {len} raster bytes, found {}",
                bytes.len().saturating_sub(pos)
            )));
        }
        Ok(Self {
            width,
            height,
            pixels: bytes[pos..].to_vec(),
        })
    }

    pub fn write_ppm(&self, path: &Path) -> io::Result<()> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.to_ppm())?;
        f.flush()
    }

    pub fn read_ppm(path: &Path) -> Result<Self, SceneError> {
        Self::from_ppm(&fs::read(path)?)
    }
}

/// Renders `scene` from a camera at world pose `camera_pose`.
pub fn render(scene: &PointScene, camera_pose: &PoseSE3, k: &CameraIntrinsics, splat_radius: u32) -> Image {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut image = Image::filled(k.width, k.height, BACKGROUND);
    let mut depth = vec![f64::INFINITY; w * h];
    let world_to_cam = camera_pose.inverse();
    let r = splat_radius as i64;
    for p in &scene.points {
        let pc = world_to_cam.transform_point(&Vector3::from(p.position));
        let Some(proj) = project_camera_frame(&pc, k) else {
            continue;
        };
        // rounding is half away from zero; reject anything that cannot land
        let (u, v) = (proj.u.round(), proj.v.round());
        if !(u.is_finite() && v.is_finite()) {
            continue;
        }
        let reach = (r + 1) as f64;
        if u < -reach || v < -reach || u > w as f64 + reach || v > h as f64 + reach {
            continue;
        }
        let (u, v) = (u as i64, v as i64);
        let rows = (v - r).max(0)..=(v + r).min(h as i64 - 1);
        for row in rows {
            for col in (u - r).max(0)..=(u + r).min(w as i64 - 1) {
                let idx = row as usize * w + col as usize;
                if proj.depth < depth[idx] {
                    depth[idx] = proj.depth;
                    image.set_pixel(col as usize, row as usize, p.color);
                }
            }
        }
    }
    image
}
