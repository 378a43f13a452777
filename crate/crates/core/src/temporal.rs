//! Per-frame metric calibration of a panorama depth sequence against an
//! external metric depth estimate of the central view.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erp::{bilinear_wrapped, erp_pixel_for_dir, ErpFrame, PerspectiveCamera};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pose::SceneCamera;

/// Metric depth of the central view for every frame, with the camera pose
/// that produced it.
#[derive(Clone, Debug)]
pub struct MetricReference {
    depths: Vec<Image>,
    poses: Vec<SceneCamera>,
}

impl MetricReference {
    pub fn new(depths: Vec<Image>, poses: Vec<SceneCamera>) -> Result<Self> {
        if depths.len() != poses.len() {
            return Err(Error::arg(format!("{} depth maps but {} poses", depths.len(), poses.len())));
        }
        for (t, d) in depths.iter().enumerate() {
            if d.channels() != 1 {
                return Err(Error::shape(format!("metric depth {t} has {} channels", d.channels())));
            }
            if !d.data().iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("metric depth {t} has non-positive values")));
            }
        }
        Ok(MetricReference { depths, poses })
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn depths(&self) -> &[Image] {
        &self.depths
    }

    pub fn poses(&self) -> &[SceneCamera] {
        &self.poses
    }
}

/// Affine map `D ↦ alpha · D + beta` of one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalCalibration {
    pub alpha: f64,
    pub beta: f64,
}

/// Central reference camera: azimuth 0, elevation 0, 90° field of view.
pub fn reference_camera(size: usize) -> Result<PerspectiveCamera> {
    PerspectiveCamera::from_degrees(0.0, 0.0, 90.0, size)
}

/// Projects radial panorama depth into a tangent camera placed at the
/// panorama centre.
///
/// Depth is sampled bilinearly along each pixel ray. For a co-centred
/// camera the distance along the ray equals the radial depth, so sampled
/// values are used as ray distances without further conversion.
pub fn center_perspective_depth(pano_depth: &ErpFrame, cam: &PerspectiveCamera) -> Image {
    let dims = pano_depth.dims();
    let s = cam.size();
    let mut out = Image::new(s, s, 1);
    let mut px = [0.0];
    for r in 0..s {
        for c in 0..s {
            let (u, v) = erp_pixel_for_dir(dims, &cam.pixel_ray(r, c));
            bilinear_wrapped(pano_depth, u, v, &mut px);
            out.set(r, c, 0, px[0]);
        }
    }
    out
}

/// Lower median (element `⌊(n − 1)/2⌋` in sorted order).
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Some(*m)
}

/// `alpha = median(d_metric / d)`, then `beta = median(d_metric − alpha·d)`
/// with the already computed `alpha`. Only pixels where `mask` is true are
/// used when a mask is given.
pub fn calibrate_frame(d: &Image, d_metric: &Image, mask: Option<&[bool]>) -> Result<TemporalCalibration> {
    d.check_same_shape(d_metric, "calibration grids")?;
    if let Some(m) = mask {
        if m.len() != d.len() {
            return Err(Error::shape(format!("mask has {} entries for {} pixels", m.len(), d.len())));
        }
    }
    let used = |i: usize| mask.is_none_or(|m| m[i]);
    let pairs: Vec<(f64, f64)> = d
        .data()
        .iter()
        .zip(d_metric.data())
        .enumerate()
        .filter(|(i, _)| used(*i))
        .map(|(_, (a, b))| (*a, *b))
        .collect();
    if pairs.is_empty() {
        return Err(Error::arg("calibration needs at least one pixel"));
    }
    if let Some((a, _)) = pairs.iter().find(|(a, _)| !(*a > 0.0)) {
        return Err(Error::arg(format!("projected depth must be positive, found {a}")));
    }
    let mut ratios: Vec<f64> = pairs.iter().map(|(a, b)| b / a).collect();
    let alpha = lower_median(&mut ratios).unwrap();
    let mut residuals: Vec<f64> = pairs.iter().map(|(a, b)| b - alpha * a).collect();
    let beta = lower_median(&mut residuals).unwrap();
    Ok(TemporalCalibration { alpha, beta })
}

/// Applies `alpha · D + beta` to every pixel.
pub fn apply_calibration(depth: &ErpFrame, cal: TemporalCalibration) -> ErpFrame {
    let img = depth.image().map(|v| cal.alpha * v + cal.beta);
    ErpFrame::new(img).expect("same dimensions as the input")
}

/// Options of [`align_sequence`].
#[derive(Clone, Debug, Default)]
pub struct TemporalAlignConfig {
    /// Per-frame pixel masks over the reference grid; all pixels when absent.
    pub masks: Option<Vec<Vec<bool>>>,
}

/// Calibrates and maps every frame into the metric space of `reference`.
///
/// Each frame's depth is projected into the central camera at the metric
/// resolution, calibrated against the metric depth, and the resulting
/// affine map is applied to the full panorama. A non-positive scale is
/// logged as a warning and the frame is still processed.
pub fn align_sequence(
    pano_depths: &[ErpFrame],
    reference: &MetricReference,
    cfg: &TemporalAlignConfig,
) -> Result<(Vec<ErpFrame>, Vec<TemporalCalibration>)> {
    if pano_depths.len() != reference.len() {
        return Err(Error::arg(format!(
            "{} panorama depth frames but {} metric references",
            pano_depths.len(),
            reference.len()
        )));
    }
    if let Some(masks) = &cfg.masks {
        if masks.len() != pano_depths.len() {
            return Err(Error::arg("one mask per frame is required"));
        }
    }
    let results: Vec<(ErpFrame, TemporalCalibration)> = (0..pano_depths.len())
        .into_par_iter()
        .map(|t| {
            let metric = &reference.depths[t];
            if metric.height() != metric.width() {
                return Err(Error::shape(format!("metric depth {t} must be square")));
            }
            let cam = reference_camera(metric.height())?;
            let d = center_perspective_depth(&pano_depths[t], &cam);
            let mask = cfg.masks.as_ref().map(|m| m[t].as_slice());
            let cal = calibrate_frame(&d, metric, mask)?;
            if !(cal.alpha > 0.0) {
                log::warn!("frame {t}: calibration scale {} is not positive", cal.alpha);
            }
            Ok((apply_calibration(&pano_depths[t], cal), cal))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: &[f64]) -> Image {
        Image::from_vec(1, v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_medians() {
        let c = calibrate_frame(&img(&[2.0, 4.0, 8.0]), &img(&[1.0, 2.0, 4.0]), None).unwrap();
        assert_eq!((c.alpha, c.beta), (0.5, 0.0));
        let c = calibrate_frame(&img(&[2.0, 4.0, 8.0]), &img(&[1.0, 2.0, 100.0]), None).unwrap();
        assert_eq!((c.alpha, c.beta), (0.5, 0.0));
        let c = calibrate_frame(&img(&[3.0, 5.0]), &img(&[3.0, 5.0]), None).unwrap();
        assert_eq!((c.alpha, c.beta), (1.0, 0.0));
    }

    #[test]
    fn even_counts_take_the_lower_median() {
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&mut []), None);
    }

    #[test]
    fn masks_restrict_the_pixels() {
        let d = img(&[1.0, 1.0, 1.0]);
        let m = img(&[2.0, 9.0, 9.0]);
        let c = calibrate_frame(&d, &m, Some(&[true, false, false])).unwrap();
        assert_eq!(c.alpha, 2.0);
        assert!(calibrate_frame(&d, &m, Some(&[false; 3])).is_err());
    }

    #[test]
    fn rejects_empty_and_non_positive_input() {
        assert!(calibrate_frame(&Image::new(0, 0, 1), &Image::new(0, 0, 1), None).is_err());
        assert!(calibrate_frame(&img(&[0.0]), &img(&[1.0]), None).is_err());
    }
}
