//! Shared noise initialization for jointly generated views.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{project_erp_to_perspective, ErpDims, ErpFrame, Sampling, ViewRig};
use crate::image::Image;

/// Draws an i.i.d. standard-normal panorama noise field.
pub fn sample_panorama_noise<R: Rng + ?Sized>(dims: ErpDims, channels: usize, rng: &mut R) -> ErpFrame {
    let data = (0..dims.pixel_count() * channels)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    ErpFrame::new(Image::from_vec(dims.height(), dims.width(), channels, data).expect("sized"))
        .expect("2:1 by construction")
}

/// Derives one noise grid per rig camera from a panorama noise field.
///
/// Sampling is nearest-neighbour: every output value is a copy of one
/// panorama sample, so each output pixel stays exactly standard normal.
/// Interpolating would average neighbours and shrink the variance.
pub fn project_shared_noise(pano_noise: &ErpFrame, rig: &ViewRig) -> Vec<Image> {
    rig.cameras()
        .iter()
        .map(|cam| project_erp_to_perspective(pano_noise, cam, Sampling::Nearest))
        .collect()
}
