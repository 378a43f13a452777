use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A square-frustum pinhole camera at the panorama centre, looking along
/// `(azimuth, elevation)`.
///
/// Pixel `(row, col)` has its centre at continuous coordinate `(row, col)`;
/// the image spans `[-0.5, size - 0.5]` on both axes. Rows grow downwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraSpec", into = "CameraSpec")]
pub struct PerspectiveCamera {
    azimuth: f64,
    elevation: f64,
    fov: f64,
    size: usize,
}

impl PerspectiveCamera {
    /// Angles in radians.
    pub fn new(azimuth: f64, elevation: f64, fov: f64, size: usize) -> Result<Self> {
        if !(fov > 0.0 && fov < PI) {
            return Err(Error::arg(format!("fov must lie in (0, π), got {fov}")));
        }
        if size == 0 {
            return Err(Error::arg("camera resolution must be at least 1x1"));
        }
        if !azimuth.is_finite() || !elevation.is_finite() || elevation.abs() > FRAC_PI_2 {
            return Err(Error::arg(format!(
                "bad camera direction (azimuth {azimuth}, elevation {elevation})"
            )));
        }
        Ok(PerspectiveCamera {
            azimuth,
            elevation,
            fov,
            size,
        })
    }

    pub fn from_degrees(azimuth: f64, elevation: f64, fov: f64, size: usize) -> Result<Self> {
        Self::new(
            azimuth.to_radians(),
            elevation.to_radians(),
            fov.to_radians(),
            size,
        )
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn fov(&self) -> f64 {
        self.fov
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Same orientation and field of view at another resolution.
    pub fn with_size(&self, size: usize) -> Result<Self> {
        Self::new(self.azimuth, self.elevation, self.fov, size)
    }

    /// Same camera turned by `delta` radians of azimuth.
    pub fn rotated(&self, delta: f64) -> Self {
        PerspectiveCamera {
            azimuth: self.azimuth + delta,
            ..*self
        }
    }

    #[inline]
    pub fn tan_half_fov(&self) -> f64 {
        (0.5 * self.fov).tan()
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.size as f64 / self.tan_half_fov()
    }

    /// Camera-to-world rotation; columns are the right, up and forward axes.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        let forward = Vector3::new(ce * sa, se, ce * ca);
        let right = Vector3::new(ca, 0.0, -sa);
        let up = forward.cross(&right);
        Matrix3::from_columns(&[right, up, forward])
    }

    /// Normalized tangent-plane coordinates of a continuous pixel position,
    /// `x` right and `y` up, both in `[-1, 1]` across the image.
    #[inline]
    pub fn normalized_coords(&self, row: f64, col: f64) -> (f64, f64) {
        let s = self.size as f64;
        (2.0 * (col + 0.5) / s - 1.0, 1.0 - 2.0 * (row + 0.5) / s)
    }

    /// Unit world-space ray through a continuous pixel position.
    pub fn ray(&self, row: f64, col: f64) -> Vector3<f64> {
        self.ray_with(&self.rotation(), row, col)
    }

    #[inline]
    pub(crate) fn ray_with(&self, rot: &Matrix3<f64>, row: f64, col: f64) -> Vector3<f64> {
        let t = self.tan_half_fov();
        let (x, y) = self.normalized_coords(row, col);
        (rot * Vector3::new(x * t, y * t, 1.0)).normalize()
    }

    /// Unit world-space ray through the centre of pixel `(row, col)`.
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vector3<f64> {
        self.ray(row as f64, col as f64)
    }

    /// Normalized tangent coordinates of a world direction, or `None` if it
    /// points behind the camera.
    #[inline]
    pub(crate) fn tangent_with(&self, rot: &Matrix3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let c = rot.transpose() * dir;
        if c.z <= 0.0 {
            return None;
        }
        let t = self.tan_half_fov();
        Some((c.x / (c.z * t), c.y / (c.z * t)))
    }

    /// Continuous pixel coordinate `(row, col)` of a world direction, or
    /// `None` if it points behind the camera. The result may lie outside the
    /// image.
    pub fn project_dir(&self, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        self.project_with(&self.rotation(), dir)
    }

    #[inline]
    pub(crate) fn project_with(&self, rot: &Matrix3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let (x, y) = self.tangent_with(rot, dir)?;
        let s = self.size as f64;
        Some((0.5 * (1.0 - y) * s - 0.5, 0.5 * (x + 1.0) * s - 0.5))
    }

    /// True if `dir` falls inside the camera's square frustum.
    pub fn contains(&self, dir: &Vector3<f64>) -> bool {
        matches!(self.tangent_with(&self.rotation(), dir), Some((x, y)) if x.abs() <= 1.0 && y.abs() <= 1.0)
    }
}

/// JSON form of a tangent camera, angles in degrees.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraSpec {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
    pub h: usize,
    pub w: usize,
}

impl TryFrom<CameraSpec> for PerspectiveCamera {
    type Error = Error;

    fn try_from(s: CameraSpec) -> Result<Self> {
        if s.h != s.w {
            return Err(Error::arg(format!(
                "tangent cameras are square, got {}x{}",
                s.h, s.w
            )));
        }
        PerspectiveCamera::from_degrees(s.azimuth_deg, s.elevation_deg, s.fov_deg, s.h)
    }
}

impl From<PerspectiveCamera> for CameraSpec {
    fn from(c: PerspectiveCamera) -> Self {
        CameraSpec {
            azimuth_deg: c.azimuth.to_degrees(),
            elevation_deg: c.elevation.to_degrees(),
            fov_deg: c.fov.to_degrees(),
            h: c.size,
            w: c.size,
        }
    }
}

/// An ordered set of tangent cameras sharing the panorama centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViewRig {
    cameras: Vec<PerspectiveCamera>,
}

impl ViewRig {
    pub fn new(cameras: Vec<PerspectiveCamera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::arg("a view rig needs at least one camera"));
        }
        Ok(ViewRig { cameras })
    }

    /// Four horizontal 90° views at azimuths 0°, 90°, 180° and 270°.
    pub fn four_view(size: usize) -> Result<Self> {
        let cameras = [0.0, 90.0, 180.0, 270.0]
            .iter()
            .map(|&az| PerspectiveCamera::from_degrees(az, 0.0, 90.0, size))
            .collect::<Result<_>>()?;
        Ok(ViewRig { cameras })
    }

    /// Eight 90° views covering the sphere: the four horizontal views plus
    /// two tilted up by 60° and two tilted down by 60°.
    pub fn eight_view(size: usize) -> Result<Self> {
        let dirs = [
            (0.0, 0.0),
            (90.0, 0.0),
            (180.0, 0.0),
            (270.0, 0.0),
            (45.0, 60.0),
            (225.0, 60.0),
            (135.0, -60.0),
            (315.0, -60.0),
        ];
        let cameras = dirs
            .iter()
            .map(|&(az, el)| PerspectiveCamera::from_degrees(az, el, 90.0, size))
            .collect::<Result<_>>()?;
        Ok(ViewRig { cameras })
    }

    /// Twenty 90° views through the face centres of an icosahedron.
    pub fn icosahedral(size: usize) -> Result<Self> {
        let cameras = icosahedron_face_centres()
            .into_iter()
            .map(|d| {
                let (az, el) = super::lon_lat_for_dir(&d);
                PerspectiveCamera::new(az, el, 90f64.to_radians(), size)
            })
            .collect::<Result<_>>()?;
        Ok(ViewRig { cameras })
    }

    pub fn cameras(&self) -> &[PerspectiveCamera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// The same rig at another per-view resolution.
    pub fn with_size(&self, size: usize) -> Result<Self> {
        let cameras = self
            .cameras
            .iter()
            .map(|c| c.with_size(size))
            .collect::<Result<_>>()?;
        Ok(ViewRig { cameras })
    }
}

/// Unit face-centre directions of a pole-up icosahedron, ordered by
/// descending elevation and then azimuth.
fn icosahedron_face_centres() -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts = Vec::with_capacity(12);
    for a in [-1.0, 1.0] {
        for b in [-phi, phi] {
            verts.push(Vector3::new(0.0, a, b));
            verts.push(Vector3::new(a, b, 0.0));
            verts.push(Vector3::new(b, 0.0, a));
        }
    }
    // Tilt so that a vertex sits on +y; the face rings then line up in
    // elevation bands.
    let top = verts[1].normalize();
    let rot = nalgebra::Rotation3::rotation_between(&top, &Vector3::y())
        .unwrap_or_else(nalgebra::Rotation3::identity);
    let verts: Vec<_> = verts.iter().map(|v| rot * v.normalize()).collect();

    let edge = verts
        .iter()
        .skip(1)
        .map(|v| (v - verts[0]).norm())
        .fold(f64::INFINITY, f64::min);
    let adjacent = |a: usize, b: usize| ((verts[a] - verts[b]).norm() - edge).abs() < 1e-9;

    let mut centres = Vec::with_capacity(20);
    for i in 0..12 {
        for j in i + 1..12 {
            for k in j + 1..12 {
                if adjacent(i, j) && adjacent(j, k) && adjacent(i, k) {
                    centres.push((verts[i] + verts[j] + verts[k]).normalize());
                }
            }
        }
    }
    let key = |d: &Vector3<f64>| {
        let (lon, lat) = super::lon_lat_for_dir(d);
        ((-lat * 1e6).round() as i64, (lon.rem_euclid(2.0 * PI) * 1e6).round() as i64)
    };
    centres.sort_by_key(key);
    centres
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_orthonormal_and_forward_matches_direction() {
        let cam = PerspectiveCamera::from_degrees(37.0, -20.0, 90.0, 8).unwrap();
        let r = cam.rotation();
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-14);
        assert!((r.determinant() - 1.0).abs() < 1e-14);
        let f = crate::erp::dir_for_lon_lat(37f64.to_radians(), -20f64.to_radians());
        assert!((r.column(2) - f).norm() < 1e-14);
    }

    #[test]
    fn project_inverts_ray() {
        let cam = PerspectiveCamera::from_degrees(-120.0, 33.0, 75.0, 31).unwrap();
        for (row, col) in [(0.0, 0.0), (15.0, 15.0), (3.25, 29.5), (-0.5, 30.5)] {
            let d = cam.ray(row, col);
            let (r2, c2) = cam.project_dir(&d).unwrap();
            assert!((r2 - row).abs() < 1e-10 && (c2 - col).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_cameras_are_rejected() {
        assert!(PerspectiveCamera::new(0.0, 0.0, 0.0, 8).is_err());
        assert!(PerspectiveCamera::new(0.0, 0.0, PI, 8).is_err());
        assert!(PerspectiveCamera::new(0.0, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn icosahedral_rig_has_twenty_distinct_views() {
        let rig = ViewRig::icosahedral(16).unwrap();
        assert_eq!(rig.len(), 20);
        let fwd: Vec<_> = rig.cameras().iter().map(|c| c.rotation().column(2).into_owned()).collect();
        for i in 0..20 {
            for j in i + 1..20 {
                assert!((fwd[i] - fwd[j]).norm() > 0.5);
            }
        }
        // Face centres come in four elevation rings of five.
        let mut els: Vec<i64> = rig.cameras().iter().map(|c| (c.elevation().to_degrees() * 100.0).round() as i64).collect();
        els.dedup();
        assert_eq!(els.len(), 4);
    }

    #[test]
    fn camera_json_uses_degrees() {
        let cam = PerspectiveCamera::from_degrees(90.0, 0.0, 90.0, 64).unwrap();
        let json = serde_json::to_string(&cam).unwrap();
        assert!(json.contains("\"azimuth_deg\":90.0"), "{json}");
        let back: PerspectiveCamera = serde_json::from_str(&json).unwrap();
        assert!((back.azimuth() - cam.azimuth()).abs() < 1e-15);
        let bad = r#"{"azimuth_deg":0,"elevation_deg":0,"fov_deg":90,"h":4,"w":8}"#;
        assert!(serde_json::from_str::<PerspectiveCamera>(bad).is_err());
    }
}
