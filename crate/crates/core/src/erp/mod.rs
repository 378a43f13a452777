//! Equirectangular (ERP) panoramas and their tangent-plane views.
//!
//! Conventions used throughout the crate:
//!
//! * Directions are unit vectors with `x` pointing right, `y` up and `z`
//!   forward. Longitude `λ` is measured from `+z` towards `+x`, latitude `φ`
//!   from the horizon towards `+y`:
//!   `d = (cos φ sin λ, sin φ, cos φ cos λ)`.
//! * ERP pixel `(u, v)` (column, row) is the cell centred on
//!   `λ = 2π(u + ½)/W − π`, `φ = π/2 − π(v + ½)/H`. Continuous pixel
//!   coordinates put pixel centres on integers.
//! * Every ERP frame has `W == 2H`.

mod camera;
mod mask;
mod noise;
mod posenc;
mod project;
mod seam;

pub use camera::{PerspectiveCamera, ViewRig};
pub use mask::{build_correspondence_mask, CorrespondenceMask};
pub use noise::{project_shared_noise, sample_panorama_noise};
pub use posenc::{spherical_pos_encoding, SphericalPosEncoding, MAX_ENCODING_FREQUENCY};
pub use project::{
    project_erp_to_perspective, project_perspective_to_erp, sample_erp, Sampling,
};
pub use seam::{circular_pad, roll_columns, rotate_latent_90};
pub(crate) use project::{bilinear_clamped, bilinear_wrapped};

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::Deref;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::Image;

/// Size of an equirectangular grid. Width is always twice the height.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ErpDims {
    height: usize,
}

impl ErpDims {
    pub fn new(height: usize) -> Result<Self> {
        if height == 0 {
            return Err(Error::arg("ERP height must be at least 1"));
        }
        Ok(ErpDims { height })
    }

    /// Dimensions from an explicit `(height, width)` pair, rejecting anything
    /// that is not 1:2.
    pub fn from_hw(height: usize, width: usize) -> Result<Self> {
        if width != 2 * height {
            return Err(Error::arg(format!(
                "ERP grid must have width == 2*height, got {height}x{width}"
            )));
        }
        Self::new(height)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        2 * self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width()
    }

    /// Longitude/latitude of a continuous pixel coordinate.
    #[inline]
    pub fn lon_lat(&self, u: f64, v: f64) -> (f64, f64) {
        let lon = TAU * (u + 0.5) / self.width() as f64 - PI;
        let lat = FRAC_PI_2 - PI * (v + 0.5) / self.height as f64;
        (lon, lat)
    }

    /// Continuous pixel coordinate of a longitude/latitude pair.
    #[inline]
    pub fn pixel_for_lon_lat(&self, lon: f64, lat: f64) -> (f64, f64) {
        let u = (lon + PI) / TAU * self.width() as f64 - 0.5;
        let v = (FRAC_PI_2 - lat) / PI * self.height as f64 - 0.5;
        (u, v)
    }

    /// Integer pixel whose cell contains `dir`.
    pub fn pixel_index_for_dir(&self, dir: &Vector3<f64>) -> (usize, usize) {
        let (lon, lat) = lon_lat_for_dir(dir);
        let w = self.width();
        let h = self.height;
        let uf = ((lon + PI) / TAU * w as f64).floor() as isize;
        let vf = ((FRAC_PI_2 - lat) / PI * h as f64).floor() as isize;
        let u = uf.rem_euclid(w as isize) as usize;
        let v = vf.clamp(0, h as isize - 1) as usize;
        (u, v)
    }

    /// Angular size of one pixel row.
    pub fn pixel_pitch(&self) -> f64 {
        PI / self.height as f64
    }
}

/// Unit direction for a longitude/latitude pair.
#[inline]
pub fn dir_for_lon_lat(lon: f64, lat: f64) -> Vector3<f64> {
    let (sl, cl) = lon.sin_cos();
    let (sp, cp) = lat.sin_cos();
    Vector3::new(cp * sl, sp, cp * cl)
}

/// Longitude in `(-π, π]` and latitude in `[-π/2, π/2]` of a direction.
/// The direction need not be normalized.
#[inline]
pub fn lon_lat_for_dir(dir: &Vector3<f64>) -> (f64, f64) {
    let lon = dir.x.atan2(dir.z);
    let lat = dir.y.atan2(dir.x.hypot(dir.z));
    (lon, lat)
}

/// Unit direction through the centre of ERP pixel `(u, v)`.
pub fn dir_for_erp_pixel(dims: ErpDims, u: usize, v: usize) -> Result<Vector3<f64>> {
    if u >= dims.width() || v >= dims.height() {
        return Err(Error::arg(format!(
            "pixel ({u}, {v}) outside {}x{} ERP grid",
            dims.height(),
            dims.width()
        )));
    }
    let (lon, lat) = dims.lon_lat(u as f64, v as f64);
    Ok(dir_for_lon_lat(lon, lat))
}

/// Continuous ERP pixel coordinate `(u, v)` hit by `dir`; pixel centres are
/// integers. Inverse of [`dir_for_erp_pixel`] on pixel centres.
pub fn erp_pixel_for_dir(dims: ErpDims, dir: &Vector3<f64>) -> (f64, f64) {
    let (lon, lat) = lon_lat_for_dir(dir);
    dims.pixel_for_lon_lat(lon, lat)
}

/// An equirectangular frame: an [`Image`] with `width == 2 * height`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErpFrame(Image);

impl ErpFrame {
    pub fn new(image: Image) -> Result<Self> {
        ErpDims::from_hw(image.height(), image.width())?;
        if image.channels() == 0 {
            return Err(Error::arg("ERP frame needs at least one channel"));
        }
        Ok(ErpFrame(image))
    }

    pub fn zeros(dims: ErpDims, channels: usize) -> Self {
        ErpFrame(Image::new(dims.height(), dims.width(), channels))
    }

    /// Evaluates `f(direction, channel)` at every pixel centre.
    pub fn from_dir_fn(
        dims: ErpDims,
        channels: usize,
        mut f: impl FnMut(&Vector3<f64>, usize) -> f64,
    ) -> Self {
        let img = Image::from_fn(dims.height(), dims.width(), channels, |v, u, ch| {
            let (lon, lat) = dims.lon_lat(u as f64, v as f64);
            f(&dir_for_lon_lat(lon, lat), ch)
        });
        ErpFrame(img)
    }

    pub fn dims(&self) -> ErpDims {
        ErpDims {
            height: self.0.height(),
        }
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn image_mut(&mut self) -> &mut Image {
        &mut self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

impl Deref for ErpFrame {
    type Target = Image;

    fn deref(&self) -> &Image {
        &self.0
    }
}

impl TryFrom<Image> for ErpFrame {
    type Error = Error;

    fn try_from(image: Image) -> Result<Self> {
        ErpFrame::new(image)
    }
}

/// An ordered sequence of ERP frames sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ErpVideo {
    frames: Vec<ErpFrame>,
}

impl ErpVideo {
    pub fn new(frames: Vec<ErpFrame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::arg("a video needs at least one frame"));
        };
        for (t, f) in frames.iter().enumerate() {
            if !f.same_shape(first) {
                return Err(Error::shape(format!(
                    "frame {t} is {}x{}x{}, frame 0 is {}x{}x{}",
                    f.height(),
                    f.width(),
                    f.channels(),
                    first.height(),
                    first.width(),
                    first.channels()
                )));
            }
        }
        Ok(ErpVideo { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[ErpFrame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<ErpFrame> {
        self.frames
    }

    pub fn dims(&self) -> ErpDims {
        self.frames[0].dims()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centre_pixel_sits_half_a_pixel_off_forward() {
        let dims = ErpDims::new(256).unwrap();
        let d = dir_for_erp_pixel(dims, 256, 128).unwrap();
        let (lon, lat) = lon_lat_for_dir(&d);
        assert!((lon - PI / 512.0).abs() < 1e-15);
        assert!((lat + PI / 512.0).abs() < 1e-15);
    }

    #[test]
    fn left_edge_longitude() {
        let dims = ErpDims::new(256).unwrap();
        let d = dir_for_erp_pixel(dims, 0, 128).unwrap();
        let (lon, _) = lon_lat_for_dir(&d);
        assert!((lon - (-PI + PI / 512.0)).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_pixel_is_an_error() {
        let dims = ErpDims::new(4).unwrap();
        assert!(dir_for_erp_pixel(dims, 8, 0).is_err());
        assert!(dir_for_erp_pixel(dims, 0, 4).is_err());
    }

    #[test]
    fn pixel_direction_round_trip() {
        let dims = ErpDims::new(256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let u = rng.random_range(0..dims.width());
            let v = rng.random_range(0..dims.height());
            let d = dir_for_erp_pixel(dims, u, v).unwrap();
            assert!((d.norm() - 1.0).abs() < 1e-15);
            let (uc, vc) = erp_pixel_for_dir(dims, &d);
            let back = dims.lon_lat(uc, vc);
            let d2 = dir_for_lon_lat(back.0, back.1);
            let ang = d.cross(&d2).norm().atan2(d.dot(&d2));
            assert!(ang < 1e-12, "angle {ang} at ({u},{v})");
            assert_eq!(dims.pixel_index_for_dir(&d), (u, v));
        }
    }

    #[test]
    fn non_2_to_1_frames_are_rejected() {
        assert!(ErpFrame::new(Image::new(4, 7, 1)).is_err());
        assert!(ErpFrame::new(Image::new(4, 8, 1)).is_ok());
    }

    #[test]
    fn video_requires_matching_frames() {
        let a = ErpFrame::zeros(ErpDims::new(4).unwrap(), 1);
        let b = ErpFrame::zeros(ErpDims::new(8).unwrap(), 1);
        assert!(ErpVideo::new(vec![a.clone(), b]).is_err());
        assert!(ErpVideo::new(vec![]).is_err());
        assert_eq!(ErpVideo::new(vec![a.clone(), a]).unwrap().len(), 2);
    }
}
