//! Binary little-endian PLY for Gaussian primitives.
//!
//! Each vertex carries `x y z quat_w quat_x quat_y quat_z log_scale_x
//! log_scale_y log_scale_z opacity_raw r g b` as `float`. The reader accepts
//! the properties in any order and skips extra `float` properties.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::{format_err, io_err};
use crate::error::Result;
use crate::gaussian::Gaussian3D;

const PROPS: [&str; 14] = [
    "x",
    "y",
    "z",
    "quat_w",
    "quat_x",
    "quat_y",
    "quat_z",
    "log_scale_x",
    "log_scale_y",
    "log_scale_z",
    "opacity_raw",
    "r",
    "g",
    "b",
];

fn to_record(g: &Gaussian3D) -> [f32; 14] {
    let q = g.rotation;
    [
        g.position.x as f32,
        g.position.y as f32,
        g.position.z as f32,
        q[0] as f32,
        q[1] as f32,
        q[2] as f32,
        q[3] as f32,
        g.log_scale.x as f32,
        g.log_scale.y as f32,
        g.log_scale.z as f32,
        g.opacity_raw as f32,
        g.color.x as f32,
        g.color.y as f32,
        g.color.z as f32,
    ]
}

fn from_record(r: &[f64; 14]) -> Gaussian3D {
    Gaussian3D {
        position: Vector3::new(r[0], r[1], r[2]),
        rotation: [r[3], r[4], r[5], r[6]],
        log_scale: Vector3::new(r[7], r[8], r[9]),
        opacity_raw: r[10],
        color: Vector3::new(r[11], r[12], r[13]),
    }
}

/// Writes Gaussians as a binary PLY. Values are narrowed to `f32`.
pub fn write_ply(path: &Path, gaussians: &[Gaussian3D]) -> Result<()> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        gaussians.len()
    );
    for p in PROPS {
        header.push_str("property float ");
        header.push_str(p);
        header.push('\n');
    }
    header.push_str("end_header\n");
    let mut buf = header.into_bytes();
    buf.reserve(gaussians.len() * 14 * 4);
    for g in gaussians {
        for v in to_record(g) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_ply(path: &Path) -> Result<Vec<Gaussian3D>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| format_err(path, "PLY header has no end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| format_err(path, "PLY header is not UTF-8"))?;
    let body = &bytes[end + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(format_err(path, "missing `ply` magic line"));
    }
    let mut count = None;
    let mut names: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(format_err(path, format!("unsupported PLY format `{other}`")));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| format_err(path, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                if *ty != "float" && *ty != "float32" {
                    return Err(format_err(path, format!("property `{name}` has type `{ty}`, expected float")));
                }
                names.push(name.to_string());
            }
            _ => return Err(format_err(path, format!("unexpected header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| format_err(path, "no vertex element"))?;
    let mut slots = [0usize; 14];
    for (slot, prop) in slots.iter_mut().zip(PROPS) {
        *slot = names
            .iter()
            .position(|n| n == prop)
            .ok_or_else(|| format_err(path, format!("missing property `{prop}`")))?;
    }
    let stride = names.len() * 4;
    if body.len() != count * stride {
        return Err(format_err(
            path,
            format!("expected {} bytes of vertex data, found {}", count * stride, body.len()),
        ));
    }
    Ok(body
        .chunks_exact(stride)
        .map(|rec| {
            let mut vals = [0.0f64; 14];
            for (v, &slot) in vals.iter_mut().zip(&slots) {
                *v = f32::from_le_bytes(rec[4 * slot..4 * slot + 4].try_into().unwrap()) as f64;
            }
            from_record(&vals)
        })
        .collect())
}
