#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{Matrix3, Vector3};
use pano4d::erp::{ErpDims, ErpFrame, ViewRig};
use pano4d::io::{write_camera_list, write_grids, write_poses};
use pano4d::synthetic::SphereRoom;
use pano4d::{Image, SceneCamera};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pano4d<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_pano4d"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn write_config(dir: &Path, value: &serde_json::Value) -> PathBuf {
    let p = dir.join("pipeline.json");
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

/// A radius-8 room seen from 5 units off-centre.
pub fn wide_room() -> SphereRoom {
    SphereRoom {
        center: Vector3::zeros(),
        radius: 8.0,
        ..SphereRoom::default()
    }
}

pub fn wide_origin() -> Vector3<f64> {
    Vector3::new(5.0, 0.0, 0.0)
}

/// Writes `cameras.json` and `depths.erpf` for the eight-view rig. With a
/// seed, view `k` is corrupted to `s_k·D + b_k`; the scales are returned.
pub fn spatial_input(dir: &Path, size: usize, corrupt: Option<u64>) -> Vec<f64> {
    std::fs::create_dir_all(dir).unwrap();
    let rig = ViewRig::eight_view(size).unwrap();
    let mut rng = corrupt.map(ChaCha8Rng::seed_from_u64);
    let mut scales = Vec::new();
    let depths: Vec<Image> = rig
        .cameras()
        .iter()
        .map(|c| {
            let d = wide_room().tangent_depth(c, &wide_origin());
            let (s, b) = match rng.as_mut() {
                Some(r) => (r.random_range(0.5..2.0), r.random_range(-1.0..1.0)),
                None => (1.0, 0.0),
            };
            scales.push(s);
            d.map(|v| s * v + b)
        })
        .collect();
    write_camera_list(&dir.join("cameras.json"), rig.cameras()).unwrap();
    write_grids(&dir.join("depths.erpf"), &depths).unwrap();
    scales
}

pub fn identity_pose(center: Vector3<f64>) -> SceneCamera {
    SceneCamera::new(Matrix3::identity(), center, 1.0, 1, 1).unwrap()
}

/// Color and depth panoramas of the default room from `t·step`, written as
/// `rgb.erpf`, `depth.erpf` and `poses.json`.
pub struct ReconInput {
    pub rgb: Vec<ErpFrame>,
    pub depth: Vec<ErpFrame>,
    pub poses: Vec<SceneCamera>,
}

pub fn recon_input(dir: &Path, height: usize, frames: usize, step: Vector3<f64>) -> ReconInput {
    std::fs::create_dir_all(dir).unwrap();
    let room = SphereRoom::default();
    let dims = ErpDims::new(height).unwrap();
    let mut input = ReconInput {
        rgb: Vec::new(),
        depth: Vec::new(),
        poses: Vec::new(),
    };
    for t in 0..frames {
        let origin = step * t as f64;
        let (c, d) = room.panorama(dims, &origin, &Matrix3::identity());
        input.rgb.push(c);
        input.depth.push(d);
        input.poses.push(identity_pose(origin));
    }
    let grids = |v: &[ErpFrame]| v.iter().map(|f| f.image().clone()).collect::<Vec<_>>();
    write_grids(&dir.join("rgb.erpf"), &grids(&input.rgb)).unwrap();
    write_grids(&dir.join("depth.erpf"), &grids(&input.depth)).unwrap();
    write_poses(&dir.join("poses.json"), &input.poses).unwrap();
    input
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn path_arg(p: &Path) -> &OsStr {
    p.as_os_str()
}
