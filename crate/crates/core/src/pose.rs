//! Posed pinhole cameras used for metric references, Gaussian training views
//! and render trajectories.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::erp::PerspectiveCamera;
use crate::error::{Error, Result};

/// Orthonormality tolerance for rotations read from files.
const ROTATION_TOL: f64 = 1e-5;

/// A rigid camera pose with pinhole intrinsics.
///
/// `rotation` maps camera axes (x right, y up, z forward) to world axes and
/// `center` is the camera position in world coordinates. `fov` is the
/// horizontal field of view; pixels are square and the principal point sits
/// at the image centre. Pixel `(row, col)` has its centre at image-plane
/// position `(col + ½, row + ½)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneCamera {
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
    fov: f64,
    height: usize,
    width: usize,
}

pub(crate) fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !(ortho <= ROTATION_TOL) || !((det - 1.0).abs() <= ROTATION_TOL) {
        return Err(Error::arg(format!(
            "pose rotation is not a proper rotation (orthonormality error {ortho:.3e}, det {det})"
        )));
    }
    Ok(())
}

impl SceneCamera {
    pub fn new(
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        fov: f64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        check_rotation(&rotation)?;
        if !(fov > 0.0 && fov < PI) {
            return Err(Error::arg(format!("fov must lie in (0, π), got {fov}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::arg("camera resolution must be at least 1x1"));
        }
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("camera centre must be finite"));
        }
        // Re-orthonormalize so accumulated file rounding does not leak in.
        let rotation = Rotation3::from_matrix(&rotation).into_inner();
        Ok(SceneCamera {
            rotation,
            center,
            fov,
            height,
            width,
        })
    }

    /// A tangent view of a panorama captured at `pose_rotation`/`center`.
    pub fn from_tangent(
        cam: &PerspectiveCamera,
        pose_rotation: &Matrix3<f64>,
        center: Vector3<f64>,
    ) -> Result<Self> {
        Self::new(
            pose_rotation * cam.rotation(),
            center,
            cam.fov(),
            cam.size(),
            cam.size(),
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    pub fn fov(&self) -> f64 {
        self.fov
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov).tan()
    }

    pub fn with_resolution(&self, height: usize, width: usize) -> Result<Self> {
        Self::new(self.rotation, self.center, self.fov, height, width)
    }

    /// Same intrinsics, composed with an extra rotation (applied in the
    /// camera frame) and a world-space translation.
    pub fn perturbed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        SceneCamera {
            rotation: self.rotation * rotation,
            center: self.center + translation,
            ..*self
        }
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.center)
    }

    /// Image-plane position `(x, y)` of a world point (pixel edges at
    /// integers), or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let f = self.focal();
        Some((
            f * c.x / c.z + 0.5 * self.width as f64,
            -f * c.y / c.z + 0.5 * self.height as f64,
        ))
    }

    /// Unit world-space ray through the centre of pixel `(row, col)`.
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let f = self.focal();
        let x = (col as f64 + 0.5 - 0.5 * self.width as f64) / f;
        let y = -(row as f64 + 0.5 - 0.5 * self.height as f64) / f;
        (self.rotation * Vector3::new(x, y, 1.0)).normalize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_reflections_and_skew() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(SceneCamera::new(m, Vector3::zeros(), 1.0, 4, 4).is_err());
        m[(0, 0)] = 1.1;
        assert!(SceneCamera::new(m, Vector3::zeros(), 1.0, 4, 4).is_err());
    }

    #[test]
    fn pixel_rays_project_to_pixel_centres() {
        let r = Rotation3::from_euler_angles(0.2, -0.4, 1.1).into_inner();
        let cam = SceneCamera::new(r, Vector3::new(1.0, 2.0, -3.0), 1.2, 20, 30).unwrap();
        for (row, col) in [(0, 0), (19, 29), (7, 11)] {
            let p = cam.center() + cam.pixel_ray(row, col) * 4.5;
            let (x, y) = cam.project(&p).unwrap();
            assert!((x - (col as f64 + 0.5)).abs() < 1e-9);
            assert!((y - (row as f64 + 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn tangent_camera_matches_panorama_rays() {
        let pc = PerspectiveCamera::from_degrees(70.0, -15.0, 90.0, 16).unwrap();
        let sc = SceneCamera::from_tangent(&pc, &Matrix3::identity(), Vector3::zeros()).unwrap();
        for (r, c) in [(0, 0), (5, 9), (15, 15)] {
            assert!((sc.pixel_ray(r, c) - pc.pixel_ray(r, c)).norm() < 1e-12);
        }
    }
}
