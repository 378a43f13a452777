//! Joint scale/shift alignment of tangent depth maps against a learned
//! direction-to-depth field, and fusion into one panorama depth map.
//!
//! The objective is
//!
//! ```text
//! L = mean over pixels of (softplus(αₖ)·Dₖ + βₖ − field(v))²
//!   + λ_α Σₖ (softplus(αₖ) − 1)²
//!   + λ_β Σₖ Σ (forward differences of βₖ)²
//! ```
//!
//! with one raw scale `αₖ` per view and one shift per view pixel. Tangent
//! depths are distances along each pixel ray from the shared centre, so
//! they are directly comparable with the radial depth the field predicts.

mod field;

pub use self::field::{FieldArchitecture, GeometricField};

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use self::field::{encode_dirs, sigmoid, softplus, softplus_inv};
use crate::erp::{bilinear_clamped, ErpDims, ErpFrame, PerspectiveCamera};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::{dot, Lbfgs};

/// Feather weight floor, so pixels on a view border still contribute.
const FEATHER_EPS: f64 = 1e-3;
const LBFGS_MEMORY: usize = 20;
const MAX_BACKTRACKS: usize = 30;
const ARMIJO: f64 = 1e-4;

/// Per-view tangent depth maps and their cameras.
#[derive(Clone, Debug)]
pub struct TangentDepthSet {
    cameras: Vec<PerspectiveCamera>,
    depths: Vec<Image>,
}

impl TangentDepthSet {
    /// Depths must be `size × size × 1`, finite and positive. A warning is
    /// logged when the cameras leave part of the sphere uncovered.
    pub fn new(cameras: Vec<PerspectiveCamera>, depths: Vec<Image>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::arg("a tangent depth set needs at least one view"));
        }
        if cameras.len() != depths.len() {
            return Err(Error::arg(format!("{} cameras but {} depth maps", cameras.len(), depths.len())));
        }
        for (k, (c, d)) in cameras.iter().zip(&depths).enumerate() {
            if d.height() != c.size() || d.width() != c.size() || d.channels() != 1 {
                return Err(Error::shape(format!(
                    "view {k}: depth is {}x{}x{}, camera expects {s}x{s}x1",
                    d.height(),
                    d.width(),
                    d.channels(),
                    s = c.size()
                )));
            }
            if let Some(v) = d.data().iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::arg(format!("view {k}: depth {v} is not positive and finite")));
            }
        }
        let probe = ErpDims::new(32).expect("valid dims");
        let uncovered = (0..probe.height())
            .flat_map(|v| (0..probe.width()).map(move |u| (u, v)))
            .filter(|&(u, v)| {
                let (lon, lat) = probe.lon_lat(u as f64, v as f64);
                let d = crate::erp::dir_for_lon_lat(lon, lat);
                !cameras.iter().any(|c| c.contains(&d))
            })
            .count();
        if uncovered > 0 {
            log::warn!("tangent views leave {uncovered} of {} probe directions uncovered", probe.pixel_count());
        }
        Ok(TangentDepthSet { cameras, depths })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn cameras(&self) -> &[PerspectiveCamera] {
        &self.cameras
    }

    pub fn depths(&self) -> &[Image] {
        &self.depths
    }

    fn pixel_count(&self) -> usize {
        self.depths.iter().map(Image::len).sum()
    }

    /// Pixel ray directions of all views, view-major then row-major.
    fn directions(&self) -> Vec<Vector3<f64>> {
        self.cameras
            .iter()
            .flat_map(|c| {
                let s = c.size();
                (0..s * s).map(move |i| c.pixel_ray(i / s, i % s))
            })
            .collect()
    }
}

/// Raw per-view scales and per-pixel shifts.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentParams {
    pub raw_scale: Vec<f64>,
    pub shift: Vec<Image>,
}

impl AlignmentParams {
    /// Effective scale 1 and zero shift for every view.
    pub fn identity(views: &TangentDepthSet) -> Self {
        AlignmentParams {
            raw_scale: vec![softplus_inv(1.0); views.len()],
            shift: views
                .depths
                .iter()
                .map(|d| Image::new(d.height(), d.width(), 1))
                .collect(),
        }
    }

    pub fn effective_scale(&self, k: usize) -> f64 {
        softplus(self.raw_scale[k])
    }

    pub fn effective_scales(&self) -> Vec<f64> {
        self.raw_scale.iter().map(|a| softplus(*a)).collect()
    }

    /// `softplus(αₖ)·Dₖ + βₖ`.
    pub fn corrected(&self, views: &TangentDepthSet, k: usize) -> Image {
        let s = self.effective_scale(k);
        let d = &views.depths[k];
        Image::from_fn(d.height(), d.width(), 1, |r, c, _| s * d.get(r, c, 0) + self.shift[k].get(r, c, 0))
    }

    fn shift_len(&self) -> usize {
        self.shift.iter().map(Image::len).sum()
    }

    fn flatten(&self, field: &GeometricField) -> Vec<f64> {
        let mut v = self.raw_scale.clone();
        for s in &self.shift {
            v.extend_from_slice(s.data());
        }
        v.extend(field.params());
        v
    }

    fn unflatten(&mut self, field: &mut GeometricField, flat: &[f64]) {
        let k = self.raw_scale.len();
        self.raw_scale.copy_from_slice(&flat[..k]);
        let mut at = k;
        for s in &mut self.shift {
            let n = s.len();
            s.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        field.set_params(&flat[at..]);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialAlignConfig {
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub iterations: usize,
    /// Length of the first step, before curvature information exists.
    pub step_size: f64,
    pub seed: u64,
    pub field: FieldArchitecture,
}

impl Default for SpatialAlignConfig {
    fn default() -> Self {
        SpatialAlignConfig {
            lambda_alpha: 3e-6,
            lambda_beta: 0.1,
            iterations: 3000,
            step_size: 1e-2,
            seed: 0,
            field: FieldArchitecture::default(),
        }
    }
}

impl SpatialAlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_alpha >= 0.0 && self.lambda_beta >= 0.0) {
            return Err(Error::arg("regularizer weights must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(Error::arg("alignment needs at least one iteration"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::arg("step size must be positive"));
        }
        Ok(())
    }
}

fn check_params(params: &AlignmentParams, views: &TangentDepthSet) -> Result<()> {
    if params.raw_scale.len() != views.len() || params.shift.len() != views.len() {
        return Err(Error::shape("alignment parameters do not match the number of views"));
    }
    for (k, (s, d)) in params.shift.iter().zip(&views.depths).enumerate() {
        if !s.same_shape(d) {
            return Err(Error::shape(format!("view {k}: shift grid does not match the depth map")));
        }
    }
    Ok(())
}

/// Mean squared residual between corrected view depths and the field.
pub fn depth_loss(params: &AlignmentParams, field: &GeometricField, views: &TangentDepthSet) -> Result<f64> {
    check_params(params, views)?;
    let f = field.eval_many(&views.directions());
    Ok(residuals(params, views, &f).iter().map(|r| r * r).sum::<f64>() / f.len() as f64)
}

fn residuals(params: &AlignmentParams, views: &TangentDepthSet, field_values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(field_values.len());
    let mut at = 0;
    for k in 0..views.len() {
        let s = params.effective_scale(k);
        for (d, b) in views.depths[k].data().iter().zip(params.shift[k].data()) {
            out.push(s * d + b - field_values[at]);
            at += 1;
        }
    }
    out
}

/// `Σₖ (softplus(αₖ) − 1)²`.
pub fn scale_reg(params: &AlignmentParams) -> f64 {
    params.raw_scale.iter().map(|a| (softplus(*a) - 1.0).powi(2)).sum()
}

/// Sum of squared horizontal and vertical forward differences of every
/// shift grid, without wraparound.
pub fn shift_smoothness(params: &AlignmentParams) -> f64 {
    params
        .shift
        .iter()
        .map(|b| {
            let (h, w) = (b.height(), b.width());
            let mut s = 0.0;
            for r in 0..h {
                for c in 0..w {
                    let v = b.get(r, c, 0);
                    if c + 1 < w {
                        s += (b.get(r, c + 1, 0) - v).powi(2);
                    }
                    if r + 1 < h {
                        s += (b.get(r + 1, c, 0) - v).powi(2);
                    }
                }
            }
            s
        })
        .sum()
}

/// Objective value and gradient with respect to the flattened
/// `(α, β, θ)` vector.
struct Problem<'a> {
    views: &'a TangentDepthSet,
    encoded: DMatrix<f64>,
    lambda_alpha: f64,
    lambda_beta: f64,
}

impl<'a> Problem<'a> {
    fn new(views: &'a TangentDepthSet, arch: &FieldArchitecture, lambda_alpha: f64, lambda_beta: f64) -> Self {
        Problem {
            views,
            encoded: encode_dirs(arch, &views.directions()),
            lambda_alpha,
            lambda_beta,
        }
    }

    fn value(&self, params: &AlignmentParams, field: &GeometricField) -> (f64, f64) {
        let f = field.eval_encoded(&self.encoded);
        let depth = residuals(params, self.views, &f).iter().map(|r| r * r).sum::<f64>() / f.len() as f64;
        let total = depth + self.lambda_alpha * scale_reg(params) + self.lambda_beta * shift_smoothness(params);
        (total, depth)
    }

    fn value_and_grad(&self, params: &AlignmentParams, field: &GeometricField) -> (f64, f64, Vec<f64>) {
        let f = field.eval_encoded(&self.encoded);
        let res = residuals(params, self.views, &f);
        let n = f.len() as f64;
        let depth = res.iter().map(|r| r * r).sum::<f64>() / n;
        let total = depth + self.lambda_alpha * scale_reg(params) + self.lambda_beta * shift_smoothness(params);

        let k_views = self.views.len();
        let mut grad = vec![0.0; k_views + params.shift_len()];
        let mut at = 0;
        for k in 0..k_views {
            let a = params.raw_scale[k];
            let s = softplus(a);
            let mut d_scale = 0.0;
            let d = &self.views.depths[k];
            let b = &params.shift[k];
            let (h, w) = (d.height(), d.width());
            for i in 0..d.len() {
                let r = res[at + i];
                d_scale += 2.0 * r * d.data()[i] / n;
                grad[k_views + at + i] = 2.0 * r / n;
            }
            d_scale += self.lambda_alpha * 2.0 * (s - 1.0);
            grad[k] = d_scale * sigmoid(a);
            for row in 0..h {
                for col in 0..w {
                    let v = b.get(row, col, 0);
                    let idx = k_views + at + row * w + col;
                    if col + 1 < w {
                        let diff = b.get(row, col + 1, 0) - v;
                        grad[idx + 1] += self.lambda_beta * 2.0 * diff;
                        grad[idx] -= self.lambda_beta * 2.0 * diff;
                    }
                    if row + 1 < h {
                        let diff = b.get(row + 1, col, 0) - v;
                        grad[idx + w] += self.lambda_beta * 2.0 * diff;
                        grad[idx] -= self.lambda_beta * 2.0 * diff;
                    }
                }
            }
            at += d.len();
        }
        let upstream: Vec<f64> = res.iter().map(|r| -2.0 * r / n).collect();
        grad.extend(field.backprop(&self.encoded, &upstream));
        (total, depth, grad)
    }
}

/// Full objective `L_depth + λ_α L_α + λ_β L_β`.
pub fn objective(
    params: &AlignmentParams,
    field: &GeometricField,
    views: &TangentDepthSet,
    cfg: &SpatialAlignConfig,
) -> Result<f64> {
    check_params(params, views)?;
    Ok(Problem::new(views, field.architecture(), cfg.lambda_alpha, cfg.lambda_beta).value(params, field).0)
}

/// Gradient of [`objective`], split into raw scales, shifts and field
/// parameters.
#[derive(Clone, Debug)]
pub struct ObjectiveGradient {
    pub raw_scale: Vec<f64>,
    pub shift: Vec<Image>,
    pub field: Vec<f64>,
}

pub fn objective_grad(
    params: &AlignmentParams,
    field: &GeometricField,
    views: &TangentDepthSet,
    cfg: &SpatialAlignConfig,
) -> Result<(f64, ObjectiveGradient)> {
    check_params(params, views)?;
    let p = Problem::new(views, field.architecture(), cfg.lambda_alpha, cfg.lambda_beta);
    let (total, _, flat) = p.value_and_grad(params, field);
    let k = views.len();
    let mut at = k;
    let shift = params
        .shift
        .iter()
        .map(|s| {
            let img = Image::from_vec(s.height(), s.width(), 1, flat[at..at + s.len()].to_vec()).unwrap();
            at += s.len();
            img
        })
        .collect();
    Ok((
        total,
        ObjectiveGradient {
            raw_scale: flat[..k].to_vec(),
            shift,
            field: flat[at..].to_vec(),
        },
    ))
}

/// Result of [`align`].
#[derive(Clone, Debug)]
pub struct Alignment {
    pub params: AlignmentParams,
    pub field: GeometricField,
    /// Objective after every iteration; never increases.
    pub history: Vec<f64>,
    pub initial_depth_loss: f64,
    pub final_depth_loss: f64,
}

/// Minimizes the alignment objective by L-BFGS with a backtracking
/// (Armijo) line search, so every accepted iterate lowers the objective.
/// The field starts constant at the mean input depth.
pub fn align(views: &TangentDepthSet, cfg: &SpatialAlignConfig) -> Result<Alignment> {
    cfg.validate()?;
    let mean_depth = views.depths.iter().map(|d| d.data().iter().sum::<f64>()).sum::<f64>() / views.pixel_count() as f64;
    let mut field = GeometricField::new(cfg.field, cfg.seed, mean_depth);
    let mut params = AlignmentParams::identity(views);
    let problem = Problem::new(views, &cfg.field, cfg.lambda_alpha, cfg.lambda_beta);

    let mut flat = params.flatten(&field);
    let (mut value, initial_depth_loss, mut grad) = problem.value_and_grad(&params, &field);
    let mut depth = initial_depth_loss;
    if !value.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            reason: format!("initial objective is {value}"),
        });
    }
    let mut lbfgs = Lbfgs::new(LBFGS_MEMORY);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut trial_params = params.clone();
    let mut trial_field = field.clone();

    for it in 0..cfg.iterations {
        let mut dir = lbfgs.direction(&grad, cfg.step_size);
        let mut slope = dot(&grad, &dir);
        if !(slope > 0.0) {
            lbfgs.reset();
            dir = lbfgs.direction(&grad, cfg.step_size);
            slope = dot(&grad, &dir);
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = flat.iter().zip(&dir).map(|(x, d)| x - t * d).collect();
            trial_params.unflatten(&mut trial_field, &trial);
            let (t_value, t_depth, t_grad) = problem.value_and_grad(&trial_params, &trial_field);
            if !t_value.is_finite() {
                return Err(Error::Divergence {
                    iteration: it,
                    reason: format!("objective became {t_value}"),
                });
            }
            if t_value <= value - ARMIJO * t * slope {
                lbfgs.update(
                    trial.iter().zip(&flat).map(|(a, b)| a - b).collect(),
                    t_grad.iter().zip(&grad).map(|(a, b)| a - b).collect(),
                );
                flat = trial;
                value = t_value;
                depth = t_depth;
                grad = t_grad;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            lbfgs.reset();
        }
        history.push(value);
    }
    params.unflatten(&mut field, &flat);
    Ok(Alignment {
        params,
        field,
        history,
        initial_depth_loss,
        final_depth_loss: depth,
    })
}

/// Blends corrected view depths into a panorama.
///
/// Each ERP pixel takes the weighted harmonic mean of the corrected depths
/// of every view containing its direction, with weight
/// `1 − max(|x|, |y|) + ε` in normalized tangent coordinates; non-positive
/// corrected depths are skipped. Pixels no view covers take the field value.
pub fn fuse_panorama_depth(
    views: &TangentDepthSet,
    params: &AlignmentParams,
    field: &GeometricField,
    dims: ErpDims,
) -> Result<ErpFrame> {
    check_params(params, views)?;
    let corrected: Vec<Image> = (0..views.len()).map(|k| params.corrected(views, k)).collect();
    let rotations: Vec<_> = views.cameras.iter().map(|c| c.rotation()).collect();
    let rows: Vec<Vec<f64>> = (0..dims.height())
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::with_capacity(dims.width());
            let mut px = [0.0];
            for u in 0..dims.width() {
                let (lon, lat) = dims.lon_lat(u as f64, v as f64);
                let dir = crate::erp::dir_for_lon_lat(lon, lat);
                let (mut num, mut den) = (0.0, 0.0);
                for ((cam, rot), img) in views.cameras.iter().zip(&rotations).zip(&corrected) {
                    let Some((x, y)) = cam.tangent_with(rot, &dir) else {
                        continue;
                    };
                    let edge = x.abs().max(y.abs());
                    if edge > 1.0 {
                        continue;
                    }
                    let (r, c) = cam.project_with(rot, &dir).expect("in front of the camera");
                    bilinear_clamped(img, r, c, &mut px);
                    if px[0] > 0.0 {
                        let w = 1.0 - edge + FEATHER_EPS;
                        num += w / px[0];
                        den += w;
                    }
                }
                row.push(if den > 0.0 { den / num } else { field.eval(&dir) });
            }
            row
        })
        .collect();
    let img = Image::from_vec(dims.height(), dims.width(), 1, rows.concat())?;
    ErpFrame::new(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erp::ViewRig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> FieldArchitecture {
        FieldArchitecture {
            hidden_layers: 2,
            width: 6,
            octaves: 2,
        }
    }

    fn random_set(rng: &mut ChaCha8Rng, size: usize) -> TangentDepthSet {
        let rig = ViewRig::four_view(size).unwrap();
        let depths = rig
            .cameras()
            .iter()
            .map(|_| Image::from_fn(size, size, 1, |_, _, _| rng.random_range(1.0..3.0)))
            .collect();
        TangentDepthSet::new(rig.cameras().to_vec(), depths).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, set: &TangentDepthSet) -> AlignmentParams {
        let mut p = AlignmentParams::identity(set);
        for a in &mut p.raw_scale {
            *a = rng.random_range(-1.0..1.5);
        }
        for s in &mut p.shift {
            s.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn construction_checks_shapes_and_values() {
        let cam = PerspectiveCamera::from_degrees(0.0, 0.0, 90.0, 4).unwrap();
        assert!(TangentDepthSet::new(vec![], vec![]).is_err());
        assert!(TangentDepthSet::new(vec![cam], vec![Image::filled(4, 5, 1, 1.0)]).is_err());
        assert!(TangentDepthSet::new(vec![cam], vec![Image::filled(4, 4, 1, 0.0)]).is_err());
        assert!(TangentDepthSet::new(vec![cam], vec![Image::filled(4, 4, 1, f64::NAN)]).is_err());
        assert!(TangentDepthSet::new(vec![cam], vec![Image::filled(4, 4, 1, 2.0)]).is_ok());
    }

    #[test]
    fn depth_loss_examples() {
        let cam = PerspectiveCamera::from_degrees(0.0, 0.0, 90.0, 3).unwrap();
        let set = TangentDepthSet::new(vec![cam], vec![Image::filled(3, 3, 1, 1.0)]).unwrap();
        let field = GeometricField::new(small_arch(), 0, 1.0);
        let mut p = AlignmentParams::identity(&set);
        assert!(depth_loss(&p, &field, &set).unwrap() < 1e-24);
        p.raw_scale[0] = softplus_inv(2.0);
        assert!((depth_loss(&p, &field, &set).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depth_loss_matches_per_pixel_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set = random_set(&mut rng, 5);
        let p = random_params(&mut rng, &set);
        let field = GeometricField::new(small_arch(), 9, 2.0);
        let mut sum = 0.0;
        let mut n = 0.0;
        for (k, cam) in set.cameras().iter().enumerate() {
            let s = (1.0 + p.raw_scale[k].exp()).ln();
            for r in 0..5 {
                for c in 0..5 {
                    let corrected = s * set.depths()[k].get(r, c, 0) + p.shift[k].get(r, c, 0);
                    sum += (corrected - field.eval(&cam.pixel_ray(r, c))).powi(2);
                    n += 1.0;
                }
            }
        }
        assert!((depth_loss(&p, &field, &set).unwrap() - sum / n).abs() < 1e-10);
    }

    #[test]
    fn scale_reg_examples() {
        let set = random_set(&mut ChaCha8Rng::seed_from_u64(1), 2);
        let mut p = AlignmentParams::identity(&set);
        assert!((p.raw_scale[0] - (std::f64::consts::E - 1.0).ln()).abs() < 1e-15);
        assert!(scale_reg(&p) < 1e-28);
        p.raw_scale = vec![softplus_inv(2.0)];
        assert!((scale_reg(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_smoothness_examples() {
        let mut p = AlignmentParams {
            raw_scale: vec![0.0],
            shift: vec![Image::filled(3, 4, 1, 0.7)],
        };
        assert_eq!(shift_smoothness(&p), 0.0);
        p.shift = vec![Image::from_vec(1, 2, 1, vec![0.0, 1.0]).unwrap()];
        assert_eq!(shift_smoothness(&p), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = Image::from_fn(5, 5, 1, |_, _, _| rng.random_range(-1.0..1.0));
        let mut brute = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if j + 1 < 5 {
                    brute += (b.get(i, j + 1, 0) - b.get(i, j, 0)).powi(2);
                }
                if i + 1 < 5 {
                    brute += (b.get(i + 1, j, 0) - b.get(i, j, 0)).powi(2);
                }
            }
        }
        p.shift = vec![b];
        assert_eq!(shift_smoothness(&p), brute);
    }

    #[test]
    fn objective_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let set = random_set(&mut rng, 3);
        let p = random_params(&mut rng, &set);
        let field = GeometricField::new(small_arch(), 5, 2.0);
        let mut field = field.clone();
        let mut theta = field.params();
        theta.iter_mut().for_each(|t| *t += rng.random_range(-0.3..0.3));
        field.set_params(&theta);
        let cfg = SpatialAlignConfig {
            lambda_alpha: 0.3,
            lambda_beta: 0.2,
            field: small_arch(),
            ..Default::default()
        };
        let (_, g) = objective_grad(&p, &field, &set, &cfg).unwrap();
        let f = |p: &AlignmentParams, fl: &GeometricField| objective(p, fl, &set, &cfg).unwrap();
        let h = 1e-6;
        let check = |analytic: f64, numeric: f64| {
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(err < 1e-5, "{analytic} vs {numeric}");
        };
        for k in 0..set.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.raw_scale[k] += h;
            b.raw_scale[k] -= h;
            check(g.raw_scale[k], (f(&a, &field) - f(&b, &field)) / (2.0 * h));
        }
        for (k, i) in [(0, 0), (1, 4), (3, 8), (2, 5)] {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.shift[k].data_mut()[i] += h;
            b.shift[k].data_mut()[i] -= h;
            check(g.shift[k].data()[i], (f(&a, &field) - f(&b, &field)) / (2.0 * h));
        }
        for i in (0..theta.len()).step_by(7) {
            let (mut a, mut b) = (field.clone(), field.clone());
            let mut t = theta.clone();
            t[i] += h;
            a.set_params(&t);
            t[i] -= 2.0 * h;
            b.set_params(&t);
            check(g.field[i], (f(&p, &a) - f(&p, &b)) / (2.0 * h));
        }
    }

    #[test]
    fn fusing_identical_constant_views_gives_the_constant() {
        let rig = ViewRig::four_view(6).unwrap();
        let set = TangentDepthSet::new(rig.cameras().to_vec(), vec![Image::filled(6, 6, 1, 2.5); 4]).unwrap();
        let p = AlignmentParams::identity(&set);
        let field = GeometricField::new(small_arch(), 0, 2.5);
        let fused = fuse_panorama_depth(&set, &p, &field, ErpDims::new(16).unwrap()).unwrap();
        assert!(fused.data().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn single_view_fusion_reproduces_the_corrected_depth() {
        let cam = PerspectiveCamera::from_degrees(30.0, 10.0, 80.0, 8).unwrap();
        let depth = Image::from_fn(8, 8, 1, |r, c, _| 1.0 + 0.1 * r as f64 + 0.05 * (c * c) as f64);
        let set = TangentDepthSet::new(vec![cam], vec![depth]).unwrap();
        let mut p = AlignmentParams::identity(&set);
        p.raw_scale[0] = 0.2;
        p.shift[0] = Image::from_fn(8, 8, 1, |r, c, _| 0.01 * (r + c) as f64);
        let field = GeometricField::new(small_arch(), 0, 7.0);
        let dims = ErpDims::new(24).unwrap();
        let fused = fuse_panorama_depth(&set, &p, &field, dims).unwrap();
        let corrected = p.corrected(&set, 0);
        let mut covered = 0;
        for v in 0..dims.height() {
            for u in 0..dims.width() {
                let (lon, lat) = dims.lon_lat(u as f64, v as f64);
                let d = crate::erp::dir_for_lon_lat(lon, lat);
                let got = fused.get(v, u, 0);
                if cam.contains(&d) {
                    let (r, c) = cam.project_dir(&d).unwrap();
                    let mut px = [0.0];
                    bilinear_clamped(&corrected, r, c, &mut px);
                    assert!((got - px[0]).abs() < 1e-12);
                    covered += 1;
                } else {
                    assert!((got - 7.0).abs() < 1e-12);
                }
            }
        }
        assert!(covered > 0);
    }

    fn consistent_set(size: usize) -> TangentDepthSet {
        let room = crate::synthetic::SphereRoom::default();
        let rig = ViewRig::four_view(size).unwrap();
        let depths = rig
            .cameras()
            .iter()
            .map(|c| room.tangent_depth(c, &Vector3::zeros()))
            .collect();
        TangentDepthSet::new(rig.cameras().to_vec(), depths).unwrap()
    }

    #[test]
    fn align_is_monotone_deterministic_and_fits_consistent_views() {
        let set = consistent_set(8);
        let cfg = SpatialAlignConfig {
            iterations: 300,
            ..Default::default()
        };
        let a = align(&set, &cfg).unwrap();
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.final_depth_loss < 1e-3 * a.initial_depth_loss, "{} {}", a.final_depth_loss, a.initial_depth_loss);
        let b = align(&set, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.field.params(), b.field.params());
        let fused = fuse_panorama_depth(&set, &a.params, &a.field, ErpDims::new(16).unwrap()).unwrap();
        assert!(fused.data().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn single_view_alignment_is_defined() {
        let cam = PerspectiveCamera::from_degrees(0.0, 0.0, 90.0, 6).unwrap();
        let set = TangentDepthSet::new(vec![cam], vec![Image::filled(6, 6, 1, 3.0)]).unwrap();
        let cfg = SpatialAlignConfig {
            iterations: 50,
            ..Default::default()
        };
        let a = align(&set, &cfg).unwrap();
        assert!(a.history.last().unwrap().is_finite());
        assert!(scale_reg(&a.params) < 1e-6);
    }

    #[test]
    fn runaway_step_reports_divergence() {
        let set = consistent_set(4);
        let cfg = SpatialAlignConfig {
            iterations: 5,
            step_size: 1e300,
            ..Default::default()
        };
        match align(&set, &cfg) {
            Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
