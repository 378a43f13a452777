//! Gaussian-splatting scene representation: primitives, lifting from
//! panorama depth, differentiable rasterization, reconstruction losses and
//! per-frame optimization.

mod jet;
mod loss;
mod optimize;
mod project;
mod raster;

pub use self::loss::{
    geometric_loss, geometric_loss_grad, l1_loss, l1_loss_grad, semantic_loss, ssim, ssim_loss_grad, FeatureExtractor,
    GradientPerceptual, PatchMeanFeatures, PerceptualMetric, RgbLoss,
};
pub use self::optimize::{
    optimize_frame, reconstruct_4d, training_views, DepthEstimator, FrameFit, LearningRates, LossModules, LossRecord,
    Perturbation, ReconLossConfig, ReconstructConfig, Reconstruction, TrainingView,
};
pub use self::raster::{rasterize, rasterize_with, RasterConfig, Rendering, NEAR_PLANE};

use nalgebra::{Matrix3, UnitQuaternion, Quaternion, Vector3};

use crate::erp::{dir_for_lon_lat, ErpFrame};
use crate::error::{Error, Result};

/// Number of optimizable scalars per Gaussian.
pub const PARAM_COUNT: usize = 14;

/// Flat parameter layout, in PLY property order.
pub mod layout {
    use std::ops::Range;
    pub const POSITION: Range<usize> = 0..3;
    pub const ROTATION: Range<usize> = 3..7;
    pub const LOG_SCALE: Range<usize> = 7..10;
    pub const OPACITY: usize = 10;
    pub const COLOR: Range<usize> = 11..14;
}

/// Opacity threshold of the optional pruning pass.
pub const DEFAULT_PRUNE_OPACITY: f64 = 0.005;

/// Initial standard deviation of a lifted Gaussian, in units of the local
/// point spacing.
pub const LIFT_SCALE_FACTOR: f64 = 0.6;

/// One anisotropic 3D Gaussian with RGB color.
///
/// Scales are stored as logarithms and opacity as a logit so every field is
/// unconstrained. `rotation` is a quaternion `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_raw: f64,
    pub color: Vector3<f64>,
}

impl Default for Gaussian3D {
    fn default() -> Self {
        Gaussian3D {
            position: Vector3::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::zeros(),
            opacity_raw: 0.0,
            color: Vector3::repeat(0.5),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian3D {
    pub fn isotropic(position: Vector3<f64>, sigma: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Gaussian3D {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(sigma.ln()),
            opacity_raw: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.unit_quaternion().to_rotation_matrix().into_inner()
    }

    /// World-space covariance `R S² Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scales().map(|s| s * s));
        r * s2 * r.transpose()
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            self.rotation.iter_mut().for_each(|v| *v /= n);
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }

    pub fn params(&self) -> [f64; PARAM_COUNT] {
        let mut p = [0.0; PARAM_COUNT];
        p[layout::POSITION].copy_from_slice(self.position.as_slice());
        p[layout::ROTATION].copy_from_slice(&self.rotation);
        p[layout::LOG_SCALE].copy_from_slice(self.log_scale.as_slice());
        p[layout::OPACITY] = self.opacity_raw;
        p[layout::COLOR].copy_from_slice(self.color.as_slice());
        p
    }

    pub fn from_params(p: &[f64; PARAM_COUNT]) -> Self {
        Gaussian3D {
            position: Vector3::from_column_slice(&p[layout::POSITION]),
            rotation: [p[3], p[4], p[5], p[6]],
            log_scale: Vector3::from_column_slice(&p[layout::LOG_SCALE]),
            opacity_raw: p[layout::OPACITY],
            color: Vector3::from_column_slice(&p[layout::COLOR]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

/// `T` independent Gaussian sets, one per frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianFrameSet {
    frames: Vec<Vec<Gaussian3D>>,
}

impl GaussianFrameSet {
    /// Requires at least one frame and no empty frame.
    pub fn new(frames: Vec<Vec<Gaussian3D>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::arg("a frame set needs at least one frame"));
        }
        if let Some(t) = frames.iter().position(Vec::is_empty) {
            return Err(Error::arg(format!("frame {t} has no Gaussians")));
        }
        Ok(GaussianFrameSet { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[Gaussian3D] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<Gaussian3D>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Vec<Gaussian3D>> {
        self.frames
    }
}

/// Lifts a panorama with radial depth to Gaussians, viewpoint at the origin.
pub fn lift_depth_to_gaussians(rgb: &ErpFrame, depth: &ErpFrame, stride: usize) -> Result<Vec<Gaussian3D>> {
    lift_posed(rgb, depth, stride, &Matrix3::identity(), &Vector3::zeros())
}

/// Lifts a panorama captured at `center` with orientation `rotation`.
///
/// One Gaussian per pixel whose row and column are multiples of `stride`,
/// centred at `center + rotation · (depth · direction)`, isotropic with
/// standard deviation `LIFT_SCALE_FACTOR · depth · pitch · stride`, opacity
/// 0.5 and identity rotation. Single-channel color is replicated to gray.
pub fn lift_posed(
    rgb: &ErpFrame,
    depth: &ErpFrame,
    stride: usize,
    rotation: &Matrix3<f64>,
    center: &Vector3<f64>,
) -> Result<Vec<Gaussian3D>> {
    if stride == 0 {
        return Err(Error::arg("lifting stride must be at least 1"));
    }
    let dims = rgb.dims();
    if depth.dims() != dims {
        return Err(Error::shape(format!(
            "color panorama is {}x{} but depth is {}x{}",
            dims.height(),
            dims.width(),
            depth.height(),
            depth.width()
        )));
    }
    let spacing = dims.pixel_pitch() * stride as f64;
    let mut out = Vec::with_capacity(dims.pixel_count() / (stride * stride));
    for v in (0..dims.height()).step_by(stride) {
        for u in (0..dims.width()).step_by(stride) {
            let r = depth.get(v, u, 0);
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::arg(format!("depth at pixel ({u}, {v}) is {r}, expected positive")));
            }
            let (lon, lat) = dims.lon_lat(u as f64, v as f64);
            let p = center + rotation * (dir_for_lon_lat(lon, lat) * r);
            let px = rgb.pixel(v, u);
            let color = if px.len() >= 3 {
                Vector3::new(px[0], px[1], px[2])
            } else {
                Vector3::repeat(px[0])
            };
            out.push(Gaussian3D::isotropic(p, LIFT_SCALE_FACTOR * r * spacing, 0.5, color));
        }
    }
    Ok(out)
}

/// Drops Gaussians whose opacity is below `threshold`.
pub fn prune_transparent(gaussians: &[Gaussian3D], threshold: f64) -> Vec<Gaussian3D> {
    gaussians.iter().filter(|g| g.opacity() >= threshold).copied().collect()
}

/// Axis-angle rotation by `angle` radians about `axis`.
pub(crate) fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}
