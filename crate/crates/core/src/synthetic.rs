//! Analytic test scene: the inside of a sphere viewed from an off-centre
//! point, textured with a smooth procedural color field. Depth and color
//! are exact along any ray, which makes the scene a ground-truth oracle for
//! alignment and reconstruction.

use nalgebra::{Matrix3, Vector3};

use crate::erp::{dir_for_lon_lat, ErpDims, ErpFrame, PerspectiveCamera};
use crate::image::Image;
use crate::pose::SceneCamera;

/// One sinusoidal color wave `amplitude · sin(k · p + phase)`.
#[derive(Clone, Copy, Debug)]
pub struct Wave {
    pub k: Vector3<f64>,
    pub phase: [f64; 3],
    pub amplitude: f64,
}

#[derive(Clone, Debug)]
pub struct SphereRoom {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub waves: Vec<Wave>,
}

impl Default for SphereRoom {
    fn default() -> Self {
        SphereRoom {
            center: Vector3::new(0.9, 0.4, -1.2),
            radius: 4.0,
            waves: vec![
                Wave {
                    k: Vector3::new(1.1, 0.4, -0.7),
                    phase: [0.0, 2.1, 4.2],
                    amplitude: 0.25,
                },
                Wave {
                    k: Vector3::new(-0.9, 2.2, 1.3),
                    phase: [1.0, 0.3, 2.6],
                    amplitude: 0.15,
                },
                Wave {
                    k: Vector3::new(2.6, -1.1, 2.0),
                    phase: [0.5, 3.3, 1.7],
                    amplitude: 0.08,
                },
            ],
        }
    }
}

impl SphereRoom {
    /// Distance along unit `dir` from `origin` (inside the room) to the wall.
    pub fn ray_distance(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
        let m = origin - self.center;
        let b = m.dot(dir);
        -b + (b * b - m.norm_squared() + self.radius * self.radius).sqrt()
    }

    pub fn color(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut c = Vector3::repeat(0.5);
        for w in &self.waves {
            let s = w.k.dot(p);
            for ch in 0..3 {
                c[ch] += w.amplitude * (s + w.phase[ch]).sin();
            }
        }
        c
    }

    /// Color and radial depth panoramas seen from `origin` with orientation
    /// `rotation` (panorama axes to world axes).
    pub fn panorama(&self, dims: ErpDims, origin: &Vector3<f64>, rotation: &Matrix3<f64>) -> (ErpFrame, ErpFrame) {
        let mut rgb = ErpFrame::zeros(dims, 3);
        let mut depth = ErpFrame::zeros(dims, 1);
        for v in 0..dims.height() {
            for u in 0..dims.width() {
                let (lon, lat) = dims.lon_lat(u as f64, v as f64);
                let d = rotation * dir_for_lon_lat(lon, lat);
                let t = self.ray_distance(origin, &d);
                let c = self.color(&(origin + d * t));
                rgb.image_mut().pixel_mut(v, u).copy_from_slice(c.as_slice());
                depth.image_mut().set(v, u, 0, t);
            }
        }
        (rgb, depth)
    }

    /// Color and ray-distance images seen by a posed pinhole camera.
    pub fn render(&self, cam: &SceneCamera) -> (Image, Image) {
        let (h, w) = (cam.height(), cam.width());
        let mut rgb = Image::new(h, w, 3);
        let mut depth = Image::new(h, w, 1);
        for r in 0..h {
            for c in 0..w {
                let d = cam.pixel_ray(r, c);
                let t = self.ray_distance(cam.center(), &d);
                rgb.pixel_mut(r, c).copy_from_slice(self.color(&(cam.center() + d * t)).as_slice());
                depth.set(r, c, 0, t);
            }
        }
        (rgb, depth)
    }

    /// Ray-distance images of tangent cameras centred at `origin`.
    pub fn tangent_depth(&self, cam: &PerspectiveCamera, origin: &Vector3<f64>) -> Image {
        let s = cam.size();
        Image::from_fn(s, s, 1, |r, c, _| self.ray_distance(origin, &cam.pixel_ray(r, c)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wall_points_lie_on_the_sphere() {
        let room = SphereRoom::default();
        let o = Vector3::new(0.3, -0.2, 0.1);
        for d in [Vector3::x(), -Vector3::y(), Vector3::new(1.0, 2.0, -2.0).normalize()] {
            let p = o + d * room.ray_distance(&o, &d);
            assert!(((p - room.center).norm() - room.radius).abs() < 1e-12);
        }
    }

    #[test]
    fn colors_stay_in_range() {
        let room = SphereRoom::default();
        let (rgb, _) = room.panorama(ErpDims::new(16).unwrap(), &Vector3::zeros(), &Matrix3::identity());
        let (lo, hi) = rgb.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }
}
