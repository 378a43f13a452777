//! Reconstruction losses and their gradients with respect to the rendered
//! image or depth.

use crate::image::Image;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean absolute error.
pub fn l1_loss(rendered: &Image, target: &Image) -> f64 {
    assert!(rendered.same_shape(target), "L1 operands differ in shape");
    rendered.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / rendered.len() as f64
}

/// `(L1, ∂L1/∂rendered)`, using `sign(0) = 0`.
pub fn l1_loss_grad(rendered: &Image, target: &Image) -> (f64, Image) {
    let n = rendered.len() as f64;
    let mut grad = Image::new(rendered.height(), rendered.width(), rendered.channels());
    for ((g, a), b) in grad.data_mut().iter_mut().zip(rendered.data()).zip(target.data()) {
        let d = a - b;
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    (l1_loss(rendered, target), grad)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Same-size separable blur of one `h × w` plane with zero padding. The
/// kernel is symmetric, so this operator is its own adjoint.
fn blur(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

struct SsimPlane {
    map: Vec<f64>,
    // Partials of the SSIM map with respect to the blurred x, x² and xy.
    d_mu: Vec<f64>,
    d_xx: Vec<f64>,
    d_xy: Vec<f64>,
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW], with_grad: bool) -> SsimPlane {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (blur(x, h, w, k), blur(y, h, w, k));
    let (sxx, syy, sxy) = (blur(&xx, h, w, k), blur(&yy, h, w, k), blur(&xy, h, w, k));
    let n = h * w;
    let mut out = SsimPlane {
        map: vec![0.0; n],
        d_mu: if with_grad { vec![0.0; n] } else { Vec::new() },
        d_xx: if with_grad { vec![0.0; n] } else { Vec::new() },
        d_xy: if with_grad { vec![0.0; n] } else { Vec::new() },
    };
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        let a1 = 2.0 * ux * uy + SSIM_C1;
        let a2 = 2.0 * cxy + SSIM_C2;
        let b1 = ux * ux + uy * uy + SSIM_C1;
        let b2 = vx + vy + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        out.map[i] = s;
        if with_grad {
            let den = b1 * b2;
            out.d_mu[i] = 2.0 * uy * (a2 - a1) / den - 2.0 * ux * s / b1 + 2.0 * ux * s / b2;
            out.d_xx[i] = -s / b2;
            out.d_xy[i] = 2.0 * a1 / den;
        }
    }
    out
}

fn plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data().iter().skip(ch).step_by(img.channels()).copied().collect()
}

/// Mean SSIM over all pixels and channels (11×11 Gaussian window, σ = 1.5,
/// C₁ = 0.01², C₂ = 0.03², zero padding).
pub fn ssim(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "SSIM operands differ in shape");
    let (h, w) = (a.height(), a.width());
    let k = gaussian_kernel();
    let total: f64 = (0..a.channels())
        .map(|c| ssim_plane(&plane(a, c), &plane(b, c), h, w, &k, false).map.iter().sum::<f64>())
        .sum();
    total / a.len() as f64
}

/// `(1 − SSIM, ∂(1 − SSIM)/∂rendered)`.
pub fn ssim_loss_grad(rendered: &Image, target: &Image) -> (f64, Image) {
    assert!(rendered.same_shape(target), "SSIM operands differ in shape");
    let (h, w, chans) = (rendered.height(), rendered.width(), rendered.channels());
    let k = gaussian_kernel();
    let scale = -1.0 / rendered.len() as f64;
    let mut grad = Image::new(h, w, chans);
    let mut total = 0.0;
    for c in 0..chans {
        let (x, y) = (plane(rendered, c), plane(target, c));
        let p = ssim_plane(&x, &y, h, w, &k, true);
        total += p.map.iter().sum::<f64>();
        let g_mu = blur(&p.d_mu, h, w, &k);
        let g_xx = blur(&p.d_xx, h, w, &k);
        let g_xy = blur(&p.d_xy, h, w, &k);
        for i in 0..h * w {
            grad.data_mut()[i * chans + c] = scale * (g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i]);
        }
    }
    (1.0 - total / rendered.len() as f64, grad)
}

/// A differentiable image distance standing in for a learned perceptual
/// metric.
pub trait PerceptualMetric: Send + Sync {
    fn distance(&self, rendered: &Image, target: &Image) -> f64;

    /// Gradient with respect to `rendered`; `None` when the metric is not
    /// differentiable, in which case it contributes to the loss value only.
    fn gradient(&self, _rendered: &Image, _target: &Image) -> Option<Image> {
        None
    }
}

/// Squared difference of image gradients over a 2×2 average pyramid,
/// averaged per level and summed over levels.
#[derive(Clone, Copy, Debug)]
pub struct GradientPerceptual {
    pub levels: usize,
}

impl Default for GradientPerceptual {
    fn default() -> Self {
        GradientPerceptual { levels: 3 }
    }
}

fn downsample(img: &Image) -> Image {
    let (h, w) = (img.height() / 2, img.width() / 2);
    Image::from_fn(h, w, img.channels(), |r, c, ch| {
        0.25 * (img.get(2 * r, 2 * c, ch)
            + img.get(2 * r + 1, 2 * c, ch)
            + img.get(2 * r, 2 * c + 1, ch)
            + img.get(2 * r + 1, 2 * c + 1, ch))
    })
}

/// Adjoint of [`downsample`] into an image of the given size.
fn downsample_adjoint(g: &Image, h: usize, w: usize) -> Image {
    let mut out = Image::new(h, w, g.channels());
    for r in 0..g.height() {
        for c in 0..g.width() {
            for ch in 0..g.channels() {
                let v = 0.25 * g.get(r, c, ch);
                for (dr, dc) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    out.set(2 * r + dr, 2 * c + dc, ch, v);
                }
            }
        }
    }
    out
}

impl GradientPerceptual {
    fn residual_pyramid(&self, rendered: &Image, target: &Image) -> Vec<Image> {
        let mut e = Image::from_fn(rendered.height(), rendered.width(), rendered.channels(), |r, c, ch| {
            rendered.get(r, c, ch) - target.get(r, c, ch)
        });
        let mut out = Vec::new();
        for _ in 0..self.levels {
            if e.height() < 2 || e.width() < 2 {
                break;
            }
            let next = downsample(&e);
            out.push(e);
            e = next;
        }
        out
    }

    fn finite_differences(e: &Image) -> (f64, Image) {
        // Returns (Σ (Δx e)² + (Δy e)², ∂/∂e of that sum).
        let (h, w, cs) = (e.height(), e.width(), e.channels());
        let mut sum = 0.0;
        let mut g = Image::new(h, w, cs);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..cs {
                    let v = e.get(r, c, ch);
                    if c + 1 < w {
                        let d = e.get(r, c + 1, ch) - v;
                        sum += d * d;
                        g.data_mut()[e.index(r, c + 1, ch)] += 2.0 * d;
                        g.data_mut()[e.index(r, c, ch)] -= 2.0 * d;
                    }
                    if r + 1 < h {
                        let d = e.get(r + 1, c, ch) - v;
                        sum += d * d;
                        g.data_mut()[e.index(r + 1, c, ch)] += 2.0 * d;
                        g.data_mut()[e.index(r, c, ch)] -= 2.0 * d;
                    }
                }
            }
        }
        (sum, g)
    }
}

impl PerceptualMetric for GradientPerceptual {
    fn distance(&self, rendered: &Image, target: &Image) -> f64 {
        self.residual_pyramid(rendered, target)
            .iter()
            .map(|e| Self::finite_differences(e).0 / e.len() as f64)
            .sum()
    }

    fn gradient(&self, rendered: &Image, target: &Image) -> Option<Image> {
        let pyr = self.residual_pyramid(rendered, target);
        let mut acc: Option<Image> = None;
        for e in pyr.iter().rev() {
            let (_, mut g) = Self::finite_differences(e);
            let n = e.len() as f64;
            g.data_mut().iter_mut().for_each(|v| *v /= n);
            if let Some(coarse) = acc.take() {
                let up = downsample_adjoint(&coarse, e.height(), e.width());
                g.data_mut().iter_mut().zip(up.data()).for_each(|(a, b)| *a += b);
            }
            acc = Some(g);
        }
        acc
    }
}

/// A deterministic image embedding standing in for a learned class token.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, img: &Image) -> Vec<f64>;

    /// Vector-Jacobian product: the image gradient given a feature gradient.
    /// `None` marks a non-differentiable extractor.
    fn backprop(&self, _img: &Image, _d_features: &[f64]) -> Option<Image> {
        None
    }
}

/// Per-channel means over the patches of a `1×1`, `2×2`, `4×4`, ... grid.
#[derive(Clone, Debug)]
pub struct PatchMeanFeatures {
    pub grids: Vec<usize>,
}

impl Default for PatchMeanFeatures {
    fn default() -> Self {
        PatchMeanFeatures { grids: vec![1, 2, 4] }
    }
}

impl PatchMeanFeatures {
    /// Calls `f(feature index, row, col, 1 / patch area)` for every pixel of
    /// every patch.
    fn for_each_patch(&self, h: usize, w: usize, chans: usize, mut f: impl FnMut(usize, usize, usize, usize, f64)) {
        let mut base = 0;
        for &n in &self.grids {
            for pr in 0..n {
                let (r0, r1) = (pr * h / n, (pr + 1) * h / n);
                for pc in 0..n {
                    let (c0, c1) = (pc * w / n, (pc + 1) * w / n);
                    let area = ((r1 - r0) * (c1 - c0)).max(1) as f64;
                    for ch in 0..chans {
                        let idx = base + (pr * n + pc) * chans + ch;
                        for r in r0..r1 {
                            for c in c0..c1 {
                                f(idx, r, c, ch, 1.0 / area);
                            }
                        }
                    }
                }
            }
            base += n * n * chans;
        }
    }

    fn len(&self, chans: usize) -> usize {
        self.grids.iter().map(|n| n * n * chans).sum()
    }
}

impl FeatureExtractor for PatchMeanFeatures {
    fn features(&self, img: &Image) -> Vec<f64> {
        let mut out = vec![0.0; self.len(img.channels())];
        self.for_each_patch(img.height(), img.width(), img.channels(), |i, r, c, ch, wgt| {
            out[i] += wgt * img.get(r, c, ch);
        });
        out
    }

    fn backprop(&self, img: &Image, d_features: &[f64]) -> Option<Image> {
        let mut g = Image::new(img.height(), img.width(), img.channels());
        self.for_each_patch(img.height(), img.width(), img.channels(), |i, r, c, ch, wgt| {
            g.data_mut()[img.index(r, c, ch)] += wgt * d_features[i];
        });
        Some(g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 − cos(fx(a), fx(b))`; a zero-norm feature vector yields 1.
pub fn semantic_loss(a: &Image, b: &Image, fx: &dyn FeatureExtractor) -> f64 {
    semantic_loss_features(&fx.features(a), &fx.features(b)).0
}

/// Loss and its gradients with respect to both feature vectors.
pub(crate) fn semantic_loss_features(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        log::warn!("semantic loss: zero-norm feature vector, using loss 1");
        return (1.0, vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let cos = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    let du = u.iter().zip(v).map(|(a, b)| -(b / (nu * nv) - cos * a / (nu * nu))).collect();
    let dv = v.iter().zip(u).map(|(b, a)| -(a / (nu * nv) - cos * b / (nv * nv))).collect();
    (1.0 - cos, du, dv)
}

/// `1 − Pearson(rendered, reference)`; 1 when either grid is constant.
pub fn geometric_loss(rendered: &Image, reference: &Image) -> f64 {
    geometric_loss_grad(rendered, reference).0
}

/// Loss and its gradient with respect to `rendered`.
pub fn geometric_loss_grad(rendered: &Image, reference: &Image) -> (f64, Image) {
    assert!(rendered.same_shape(reference), "depth grids differ in shape");
    let n = rendered.len() as f64;
    let (x, y) = (rendered.data(), reference.data());
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    let mut grad = Image::new(rendered.height(), rendered.width(), rendered.channels());
    if sxx == 0.0 || syy == 0.0 {
        log::warn!("geometric loss: constant depth grid, using loss 1");
        return (1.0, grad);
    }
    let norm = (sxx * syy).sqrt();
    let r = (sxy / norm).clamp(-1.0, 1.0);
    for ((g, a), b) in grad.data_mut().iter_mut().zip(x).zip(y) {
        *g = -((b - my) / norm - r * (a - mx) / sxx);
    }
    (1.0 - r, grad)
}

/// Weighted photometric loss `λ₁ L₁ + λ_ssim (1 − SSIM) + λ_lpips L_lpips`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RgbLoss {
    pub l1: f64,
    pub ssim: f64,
    pub lpips: f64,
}

impl RgbLoss {
    /// Components (unweighted) and the weighted gradient.
    pub(crate) fn evaluate(
        rendered: &Image,
        target: &Image,
        weights: [f64; 3],
        metric: Option<&dyn PerceptualMetric>,
        want_grad: bool,
    ) -> (RgbLoss, Option<Image>) {
        if !want_grad {
            let l1 = l1_loss(rendered, target);
            let s = if weights[1] > 0.0 { 1.0 - ssim(rendered, target) } else { 0.0 };
            let lp = metric.map_or(0.0, |m| m.distance(rendered, target));
            return (RgbLoss { l1, ssim: s, lpips: lp }, None);
        }
        let (l1, mut grad) = l1_loss_grad(rendered, target);
        grad.data_mut().iter_mut().for_each(|g| *g *= weights[0]);
        let mut s = 0.0;
        if weights[1] > 0.0 {
            let (v, g) = ssim_loss_grad(rendered, target);
            s = v;
            grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += weights[1] * b);
        }
        let mut lp = 0.0;
        if let Some(m) = metric {
            lp = m.distance(rendered, target);
            if weights[2] > 0.0 {
                if let Some(g) = m.gradient(rendered, target) {
                    grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += weights[2] * b);
                }
            }
        }
        (RgbLoss { l1, ssim: s, lpips: lp }, Some(grad))
    }
}
