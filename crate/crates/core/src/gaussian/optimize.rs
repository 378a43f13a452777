//! Per-frame Gaussian optimization and the 4D reconstruction driver.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{geometric_loss_grad, semantic_loss_features, FeatureExtractor, GradientPerceptual, PatchMeanFeatures, PerceptualMetric, RgbLoss};
use super::raster::{rasterize_with, RasterConfig};
use super::{axis_angle, layout, lift_posed, Gaussian3D, GaussianFrameSet, PARAM_COUNT};
use crate::erp::{project_erp_to_perspective, ErpFrame, ErpVideo, Sampling, ViewRig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::{exp_lr, Adam, Damping};
use crate::pose::SceneCamera;

/// Image-to-depth estimator used as the geometric-loss reference.
pub trait DepthEstimator: Send + Sync {
    fn estimate(&self, img: &Image) -> Image;
}

/// Pluggable loss components. `None` disables the corresponding term.
pub struct LossModules {
    pub perceptual: Option<Box<dyn PerceptualMetric>>,
    pub features: Option<Box<dyn FeatureExtractor>>,
    /// When absent, each view's own reference depth is used.
    pub depth: Option<Box<dyn DepthEstimator>>,
}

impl Default for LossModules {
    fn default() -> Self {
        LossModules {
            perceptual: Some(Box::new(GradientPerceptual::default())),
            features: Some(Box::new(PatchMeanFeatures::default())),
            depth: None,
        }
    }
}

impl LossModules {
    pub fn unplugged() -> Self {
        LossModules {
            perceptual: None,
            features: None,
            depth: None,
        }
    }
}

/// Camera jitter used to render the second image of the semantic term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    /// Rotation about a random axis, in degrees.
    pub rotation_deg: f64,
    /// Translation in a random direction, as a fraction of the scene radius.
    pub translation_fraction: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            rotation_deg: 2.0,
            translation_fraction: 0.01,
        }
    }
}

/// Adam learning rates per parameter group. Position rates are multiplied
/// by the scene radius and decay log-linearly from `position` to
/// `position_final`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconLossConfig {
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub lambda_lpips: f64,
    pub lambda_sem: f64,
    pub lambda_geo: f64,
    /// Iterations `[start, end)` during which the semantic term is active.
    pub semantic_window: [usize; 2],
    pub iterations: usize,
    pub perturbation: Perturbation,
    pub learning_rates: LearningRates,
    /// Reject any step that raises the loss of the view it was taken on.
    pub monotone: bool,
    pub min_alpha: f64,
    pub seed: u64,
}

impl Default for ReconLossConfig {
    fn default() -> Self {
        ReconLossConfig {
            lambda_l1: 0.8,
            lambda_ssim: 0.2,
            lambda_lpips: 0.05,
            lambda_sem: 1.0,
            lambda_geo: 0.05,
            semantic_window: [5400, 9000],
            iterations: 15000,
            perturbation: Perturbation::default(),
            learning_rates: LearningRates::default(),
            monotone: true,
            min_alpha: 1.0 / 255.0,
            seed: 0,
        }
    }
}

impl ReconLossConfig {
    /// Defaults with `iterations` total and the semantic window scaled by the
    /// same factor.
    pub fn scaled(iterations: usize) -> Self {
        let d = Self::default();
        let scale = |i: usize| ((i as f64 * iterations as f64 / d.iterations as f64).round() as usize).min(iterations);
        ReconLossConfig {
            semantic_window: [scale(d.semantic_window[0]), scale(d.semantic_window[1])],
            iterations,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_l1, self.lambda_ssim, self.lambda_lpips, self.lambda_sem, self.lambda_geo];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::arg("loss weights must be finite and non-negative"));
        }
        let [a, b] = self.semantic_window;
        if a > b || b > self.iterations {
            return Err(Error::arg(format!(
                "semantic window [{a}, {b}) must lie within {} iterations",
                self.iterations
            )));
        }
        if !(self.min_alpha > 0.0 && self.min_alpha < 1.0) {
            return Err(Error::arg("min_alpha must lie in (0, 1)"));
        }
        Ok(())
    }

    fn semantic_active(&self, iteration: usize) -> bool {
        self.lambda_sem > 0.0 && (self.semantic_window[0]..self.semantic_window[1]).contains(&iteration)
    }
}

/// One supervised view: camera, RGB target and optional reference depth.
#[derive(Clone, Debug)]
pub struct TrainingView {
    pub camera: SceneCamera,
    pub target: Image,
    pub reference_depth: Option<Image>,
}

/// Unweighted loss components of one iteration plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub sem: f64,
    pub geo: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iteration,L1,ssim,lpips,sem,geo,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.l1, self.ssim, self.lpips, self.sem, self.geo, self.total
        )
    }
}

#[derive(Clone, Debug)]
pub struct FrameFit {
    pub gaussians: Vec<Gaussian3D>,
    pub trace: Vec<LossRecord>,
}

struct Objective<'a> {
    views: &'a [TrainingView],
    references: Vec<Option<Image>>,
    cfg: &'a ReconLossConfig,
    modules: &'a LossModules,
    raster: RasterConfig,
}

impl Objective<'_> {
    fn evaluate(
        &self,
        gs: &[Gaussian3D],
        view: usize,
        perturbed: Option<&SceneCamera>,
        want_grad: bool,
    ) -> (LossRecord, Option<Vec<[f64; PARAM_COUNT]>>) {
        let cfg = self.cfg;
        let v = &self.views[view];
        let r = rasterize_with(gs, &v.camera, &self.raster);
        let (rgb, g_color) = RgbLoss::evaluate(
            &r.color,
            &v.target,
            [cfg.lambda_l1, cfg.lambda_ssim, cfg.lambda_lpips],
            self.modules.perceptual.as_deref(),
            want_grad,
        );
        let mut g_color = g_color;

        let mut geo = 0.0;
        let mut g_depth = None;
        if let Some(reference) = &self.references[view] {
            let (l, mut g) = geometric_loss_grad(&r.depth, reference);
            geo = l;
            if want_grad && cfg.lambda_geo > 0.0 {
                g.data_mut().iter_mut().for_each(|x| *x *= cfg.lambda_geo);
                g_depth = Some(g);
            }
        }

        let mut sem = 0.0;
        let mut extra = None;
        if let (Some(pcam), Some(fx)) = (perturbed, self.modules.features.as_deref()) {
            let r2 = rasterize_with(gs, pcam, &self.raster);
            let (l, du, dv) = semantic_loss_features(&fx.features(&r.color), &fx.features(&r2.color));
            sem = l;
            if want_grad {
                let scale = |d: Vec<f64>| d.into_iter().map(|x| x * cfg.lambda_sem).collect::<Vec<_>>();
                if let (Some(gc), Some(g1)) = (g_color.as_mut(), fx.backprop(&r.color, &scale(du))) {
                    gc.data_mut().iter_mut().zip(g1.data()).for_each(|(a, b)| *a += b);
                }
                if let Some(g2) = fx.backprop(&r2.color, &scale(dv)) {
                    extra = Some(r2.backward(gs, &g2, None, None));
                }
            }
        }

        let total = cfg.lambda_l1 * rgb.l1
            + cfg.lambda_ssim * rgb.ssim
            + cfg.lambda_lpips * rgb.lpips
            + cfg.lambda_sem * sem
            + cfg.lambda_geo * geo;
        let record = LossRecord {
            iteration: 0,
            l1: rgb.l1,
            ssim: rgb.ssim,
            lpips: rgb.lpips,
            sem,
            geo,
            total,
        };
        let grads = g_color.map(|gc| {
            let mut g = r.backward(gs, &gc, g_depth.as_ref(), None);
            if let Some(e) = extra {
                for (a, b) in g.iter_mut().zip(e) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
            g
        });
        (record, grads)
    }
}

/// Radius of the bounding sphere about the centroid of the Gaussian means.
fn scene_radius(gs: &[Gaussian3D]) -> f64 {
    if gs.is_empty() {
        return 1.0;
    }
    let c = gs.iter().fold(Vector3::zeros(), |a, g| a + g.position) / gs.len() as f64;
    let r = gs.iter().map(|g| (g.position - c).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn write_params(gs: &mut [Gaussian3D], flat: &[f64]) {
    for (g, p) in gs.iter_mut().zip(flat.chunks_exact(PARAM_COUNT)) {
        *g = Gaussian3D::from_params(p.try_into().unwrap());
        g.normalize_rotation();
    }
}

/// Minimizes the reconstruction loss over every Gaussian parameter.
///
/// Each iteration renders one training view, visiting views in a freshly
/// shuffled order per pass. Inside the semantic window a second render from
/// a jittered copy of that view's camera feeds the semantic term. With
/// `cfg.monotone`, a step is kept only if it does not raise the loss of its
/// view; rejected steps halve the step size, accepted ones restore it. The
/// trace records the loss after each iteration's accept/reject decision.
pub fn optimize_frame(
    init: &[Gaussian3D],
    views: &[TrainingView],
    cfg: &ReconLossConfig,
    modules: &LossModules,
) -> Result<FrameFit> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::arg("optimization needs at least one training view"));
    }
    for (i, v) in views.iter().enumerate() {
        let (h, w) = (v.camera.height(), v.camera.width());
        if v.target.height() != h || v.target.width() != w || v.target.channels() != 3 {
            return Err(Error::shape(format!("view {i}: target must be {h}x{w}x3")));
        }
        if let Some(d) = &v.reference_depth {
            if d.height() != h || d.width() != w || d.channels() != 1 {
                return Err(Error::shape(format!("view {i}: reference depth must be {h}x{w}x1")));
            }
        }
    }
    let mut gs = init.to_vec();
    if cfg.iterations == 0 {
        return Ok(FrameFit { gaussians: gs, trace: Vec::new() });
    }

    let references = views
        .iter()
        .map(|v| match &modules.depth {
            Some(est) => Some(est.estimate(&v.target)),
            None => v.reference_depth.clone(),
        })
        .collect();
    let objective = Objective {
        views,
        references,
        cfg,
        modules,
        raster: RasterConfig { min_alpha: cfg.min_alpha },
    };

    let radius = scene_radius(&gs);
    let lr = cfg.learning_rates;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: Vec<f64> = gs.iter().flat_map(|g| g.params()).collect();
    let mut adam = Adam::new(params.len(), 1e-15);
    let mut damping = Damping::new();
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let view = order.pop().unwrap();
        let perturbed = cfg.semantic_active(it).then(|| {
            let axis = random_unit(&mut rng);
            let dir = random_unit(&mut rng);
            let p = &cfg.perturbation;
            views[view].camera.perturbed(
                &axis_angle(&axis, p.rotation_deg.to_radians()),
                &(dir * (p.translation_fraction * radius)),
            )
        });

        let (mut record, grads) = objective.evaluate(&gs, view, perturbed.as_ref(), true);
        record.iteration = it;
        if !record.total.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                reason: format!("reconstruction loss is {}", record.total),
            });
        }
        let grads: Vec<f64> = grads.unwrap().into_iter().flatten().collect();

        let saved = cfg.monotone.then(|| (params.clone(), gs.clone()));
        let scale = damping.get();
        let pos_lr = exp_lr(lr.position, lr.position_final, it, cfg.iterations) * radius;
        adam.step(&mut params, &grads, |i| {
            scale
                * match i % PARAM_COUNT {
                    k if layout::POSITION.contains(&k) => pos_lr,
                    k if layout::ROTATION.contains(&k) => lr.rotation,
                    k if layout::LOG_SCALE.contains(&k) => lr.log_scale,
                    layout::OPACITY => lr.opacity,
                    _ => lr.color,
                }
        });
        write_params(&mut gs, &params);
        for (p, g) in params.chunks_exact_mut(PARAM_COUNT).zip(&gs) {
            p[layout::ROTATION].copy_from_slice(&g.rotation);
        }

        if let Some((saved_params, saved_gs)) = saved {
            let (mut trial, _) = objective.evaluate(&gs, view, perturbed.as_ref(), false);
            trial.iteration = it;
            if trial.total <= record.total {
                damping.accept();
                record = trial;
            } else {
                damping.reject();
                params = saved_params;
                gs = saved_gs;
            }
        }
        trace.push(record);
    }
    Ok(FrameFit { gaussians: gs, trace })
}

/// Settings of the 4D reconstruction driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub loss: ReconLossConfig,
    /// Tangent cameras used as training views, relative to each frame pose.
    pub rig: ViewRig,
    /// Lift every `lift_stride`-th panorama row and column.
    pub lift_stride: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            loss: ReconLossConfig::default(),
            rig: ViewRig::eight_view(128).expect("valid rig"),
            lift_stride: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub frames: GaussianFrameSet,
    pub traces: Vec<Vec<LossRecord>>,
}

/// Tangent-view targets of one panorama frame captured at `pose`.
///
/// Depth references are the bilinear projection of the radial panorama
/// depth, which equals the ray distance for a camera at the panorama centre.
pub fn training_views(rgb: &ErpFrame, depth: &ErpFrame, pose: &SceneCamera, rig: &ViewRig) -> Result<Vec<TrainingView>> {
    rig.cameras()
        .iter()
        .map(|cam| {
            Ok(TrainingView {
                camera: SceneCamera::from_tangent(cam, pose.rotation(), *pose.center())?,
                target: to_rgb(project_erp_to_perspective(rgb, cam, Sampling::Bilinear)),
                reference_depth: Some(project_erp_to_perspective(depth, cam, Sampling::Bilinear)),
            })
        })
        .collect()
}

fn to_rgb(img: Image) -> Image {
    match img.channels() {
        3 => img,
        1 => Image::from_fn(img.height(), img.width(), 3, |r, c, _| img.get(r, c, 0)),
        _ => Image::from_fn(img.height(), img.width(), 3, |r, c, ch| img.get(r, c, ch)),
    }
}

/// Lifts, builds training views and optimizes every frame independently.
/// Frame `t` uses seed `cfg.loss.seed + t`.
pub fn reconstruct_4d(
    video: &ErpVideo,
    aligned_depths: &[ErpFrame],
    poses: &[SceneCamera],
    cfg: &ReconstructConfig,
    modules: &LossModules,
) -> Result<Reconstruction> {
    let t = video.len();
    if aligned_depths.len() != t || poses.len() != t {
        return Err(Error::arg(format!(
            "{t} frames but {} depth maps and {} poses",
            aligned_depths.len(),
            poses.len()
        )));
    }
    cfg.loss.validate()?;
    let fits: Vec<FrameFit> = (0..t)
        .into_par_iter()
        .map(|i| {
            let rgb = &video.frames()[i];
            let pose = &poses[i];
            let init = lift_posed(rgb, &aligned_depths[i], cfg.lift_stride, pose.rotation(), pose.center())?;
            let views = training_views(rgb, &aligned_depths[i], pose, &cfg.rig)?;
            let loss = ReconLossConfig {
                seed: cfg.loss.seed.wrapping_add(i as u64),
                ..cfg.loss.clone()
            };
            optimize_frame(&init, &views, &loss, modules)
        })
        .collect::<Result<_>>()?;
    let traces = fits.iter().map(|f| f.trace.clone()).collect();
    let frames = GaussianFrameSet::new(fits.into_iter().map(|f| f.gaussians).collect())?;
    Ok(Reconstruction { frames, traces })
}
