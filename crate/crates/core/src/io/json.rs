//! JSON sidecars: tangent camera lists and per-frame pose files.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{format_err, io_err};
use crate::erp::PerspectiveCamera;
use crate::error::Result;
use crate::pose::SceneCamera;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Reads a JSON array of `{azimuth_deg, elevation_deg, fov_deg, h, w}`.
pub fn read_camera_list(path: &Path) -> Result<Vec<PerspectiveCamera>> {
    read_json(path)
}

pub fn write_camera_list(path: &Path, cameras: &[PerspectiveCamera]) -> Result<()> {
    write_json(path, cameras)
}

/// One entry of a pose file. `R` is the camera-to-world rotation in
/// row-major order and `t` the camera centre in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub fov_deg: f64,
    pub h: usize,
    pub w: usize,
}

impl PoseRecord {
    pub fn to_camera(&self) -> Result<SceneCamera> {
        SceneCamera::new(
            Matrix3::from_row_slice(&self.r),
            Vector3::from_column_slice(&self.t),
            self.fov_deg.to_radians(),
            self.h,
            self.w,
        )
    }
}

impl From<&SceneCamera> for PoseRecord {
    fn from(c: &SceneCamera) -> Self {
        let r = c.rotation();
        let mut rows = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rows[3 * i + j] = r[(i, j)];
            }
        }
        PoseRecord {
            r: rows,
            t: [c.center().x, c.center().y, c.center().z],
            fov_deg: c.fov().to_degrees(),
            h: c.height(),
            w: c.width(),
        }
    }
}

/// Reads a pose file (a JSON array of [`PoseRecord`]).
pub fn read_poses(path: &Path) -> Result<Vec<SceneCamera>> {
    let records: Vec<PoseRecord> = read_json(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.to_camera()
                .map_err(|e| format_err(path, format!("pose {i}: {e}")))
        })
        .collect()
}

pub fn write_poses(path: &Path, poses: &[SceneCamera]) -> Result<()> {
    let records: Vec<PoseRecord> = poses.iter().map(PoseRecord::from).collect();
    write_json(path, &records)
}
