//! Tile-based differentiable rasterizer.
//!
//! Gaussians are sorted once by view depth (index breaks ties) and binned
//! into 16×16 pixel tiles in that order. Each pixel composites every
//! overlapping Gaussian front to back, without early termination, so the
//! backward pass can walk the same list in reverse and recover each
//! transmittance by division.

use rayon::prelude::*;

use super::project::{project_jet, project_value, CamConsts, GEOM_PARAMS};
use super::{layout, Gaussian3D, PARAM_COUNT};
use crate::image::Image;
use crate::pose::SceneCamera;

/// Gaussians closer than this along the optical axis are culled.
pub const NEAR_PLANE: f64 = 0.05;

const TILE: usize = 16;
/// Cap on per-Gaussian alpha; keeps `1 − α` away from zero in the backward pass.
const ALPHA_MAX: f64 = 0.9999;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    /// Per-pixel contributions with smaller alpha are skipped; also sets the
    /// screen-space cutoff radius of each Gaussian.
    pub min_alpha: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig { min_alpha: 1.0 / 255.0 }
    }
}

#[derive(Clone, Copy, Debug)]
struct Prim {
    index: usize,
    z: f64,
    x: f64,
    y: f64,
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    dist: f64,
}

impl Prim {
    /// `(alpha, gaussian falloff, clamped)` at pixel centre `(px, py)`, or
    /// `None` when the contribution is skipped.
    #[inline]
    fn alpha_at(&self, px: f64, py: f64, min_alpha: f64) -> Option<(f64, f64, bool)> {
        let dx = px - self.x;
        let dy = py - self.y;
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power > 0.0 {
            return None;
        }
        let g = power.exp();
        let raw = self.opacity * g;
        if raw < min_alpha {
            return None;
        }
        Some(if raw > ALPHA_MAX { (ALPHA_MAX, g, true) } else { (raw, g, false) })
    }
}

/// Output of a forward render plus the state needed for its backward pass.
#[derive(Clone, Debug)]
pub struct Rendering {
    /// Composited RGB, `h × w × 3`, black background.
    pub color: Image,
    /// Weighted ray distance `Σ wᵢ dᵢ`, `h × w × 1`.
    pub depth: Image,
    /// Accumulated opacity `1 − Π(1 − αᵢ)`, `h × w × 1`.
    pub alpha: Image,
    prims: Vec<Prim>,
    tiles: Vec<Vec<u32>>,
    final_t: Vec<f64>,
    n_contrib: Vec<u32>,
    tiles_x: usize,
    min_alpha: f64,
    camera: SceneCamera,
}

/// Renders with the default configuration.
pub fn rasterize(gaussians: &[Gaussian3D], cam: &SceneCamera) -> Rendering {
    rasterize_with(gaussians, cam, &RasterConfig::default())
}

pub fn rasterize_with(gaussians: &[Gaussian3D], cam: &SceneCamera, cfg: &RasterConfig) -> Rendering {
    let (h, w) = (cam.height(), cam.width());
    let cc = CamConsts::new(cam);
    let min_alpha = cfg.min_alpha;

    let mut prims: Vec<(Prim, f64)> = gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let z = cc.view_z(&g.position);
            let opacity = g.opacity();
            if !(z >= NEAR_PLANE) || !(opacity > min_alpha) {
                return None;
            }
            let s = project_value(g, &cc);
            let [a, b, c] = s.cov;
            let mid = 0.5 * (a + c);
            let lambda = mid + (mid * mid - (a * c - b * b)).max(0.0).sqrt();
            let radius = (2.0 * (opacity / min_alpha).ln()).sqrt() * lambda.sqrt();
            if !radius.is_finite()
                || s.x + radius < 0.0
                || s.x - radius > w as f64
                || s.y + radius < 0.0
                || s.y - radius > h as f64
            {
                return None;
            }
            let prim = Prim {
                index,
                z,
                x: s.x,
                y: s.y,
                conic: s.conic,
                opacity,
                color: [g.color.x, g.color.y, g.color.z],
                dist: s.dist,
            };
            Some((prim, radius))
        })
        .collect();
    prims.sort_by(|(p, _), (q, _)| p.z.total_cmp(&q.z).then(p.index.cmp(&q.index)));

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    let tile_range = |lo: f64, hi: f64, n: usize| {
        let a = (lo / TILE as f64).floor().max(0.0) as usize;
        let b = ((hi / TILE as f64).floor().max(0.0) as usize).min(n - 1);
        a..=b
    };
    for (k, (p, r)) in prims.iter().enumerate() {
        for ty in tile_range(p.y - r, p.y + r, tiles_y) {
            for tx in tile_range(p.x - r, p.x + r, tiles_x) {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    let prims: Vec<Prim> = prims.into_iter().map(|(p, _)| p).collect();

    struct TileOut {
        color: Vec<[f64; 3]>,
        depth: Vec<f64>,
        t: Vec<f64>,
        n: Vec<u32>,
    }
    let outs: Vec<TileOut> = (0..tiles.len())
        .into_par_iter()
        .map(|tile| {
            let (r0, c0) = ((tile / tiles_x) * TILE, (tile % tiles_x) * TILE);
            let (r1, c1) = ((r0 + TILE).min(h), (c0 + TILE).min(w));
            let n_px = (r1 - r0) * (c1 - c0);
            let mut out = TileOut {
                color: Vec::with_capacity(n_px),
                depth: Vec::with_capacity(n_px),
                t: Vec::with_capacity(n_px),
                n: Vec::with_capacity(n_px),
            };
            let list = &tiles[tile];
            for row in r0..r1 {
                for col in c0..c1 {
                    let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
                    let mut t = 1.0;
                    let mut color = [0.0; 3];
                    let mut depth = 0.0;
                    let mut last = 0u32;
                    for (k, &pi) in list.iter().enumerate() {
                        let p = &prims[pi as usize];
                        let Some((alpha, _, _)) = p.alpha_at(px, py, min_alpha) else {
                            continue;
                        };
                        let wgt = alpha * t;
                        for (acc, c) in color.iter_mut().zip(p.color) {
                            *acc += wgt * c;
                        }
                        depth += wgt * p.dist;
                        t *= 1.0 - alpha;
                        last = k as u32 + 1;
                    }
                    out.color.push(color);
                    out.depth.push(depth);
                    out.t.push(t);
                    out.n.push(last);
                }
            }
            out
        })
        .collect();

    let mut color = Image::new(h, w, 3);
    let mut depth = Image::new(h, w, 1);
    let mut alpha = Image::new(h, w, 1);
    let mut final_t = vec![1.0; h * w];
    let mut n_contrib = vec![0u32; h * w];
    for (tile, out) in outs.into_iter().enumerate() {
        let (r0, c0) = ((tile / tiles_x) * TILE, (tile % tiles_x) * TILE);
        let c1 = (c0 + TILE).min(w);
        for (i, ((c, d), (t, n))) in out.color.iter().zip(&out.depth).zip(out.t.iter().zip(&out.n)).enumerate() {
            let (row, col) = (r0 + i / (c1 - c0), c0 + i % (c1 - c0));
            color.pixel_mut(row, col).copy_from_slice(c);
            depth.set(row, col, 0, *d);
            alpha.set(row, col, 0, 1.0 - t);
            final_t[row * w + col] = *t;
            n_contrib[row * w + col] = *n;
        }
    }

    Rendering {
        color,
        depth,
        alpha,
        prims,
        tiles,
        final_t,
        n_contrib,
        tiles_x,
        min_alpha,
        camera: *cam,
    }
}

/// Screen-space gradient slots accumulated per primitive.
const SX: usize = 0;
const SY: usize = 1;
const SCONIC: usize = 2;
const SOPACITY: usize = 5;
const SCOLOR: usize = 6;
const SDIST: usize = 9;
const SCREEN: usize = 10;

impl Rendering {
    pub fn camera(&self) -> &SceneCamera {
        &self.camera
    }

    /// Number of Gaussians that survived culling.
    pub fn visible_count(&self) -> usize {
        self.prims.len()
    }

    /// Gradients of a scalar loss with respect to every Gaussian parameter,
    /// given the loss gradients with respect to the three output images.
    /// `gaussians` must be the list this rendering was produced from. The
    /// result is indexed like `gaussians`, in [`Gaussian3D::params`] layout.
    pub fn backward(
        &self,
        gaussians: &[Gaussian3D],
        d_color: &Image,
        d_depth: Option<&Image>,
        d_alpha: Option<&Image>,
    ) -> Vec<[f64; PARAM_COUNT]> {
        let (h, w) = (self.color.height(), self.color.width());
        assert!(d_color.same_shape(&self.color), "colour gradient shape mismatch");
        let min_alpha = self.min_alpha;
        let prims = &self.prims;

        let partials: Vec<Vec<[f64; SCREEN]>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let list = &self.tiles[tile];
                let mut acc = vec![[0.0; SCREEN]; list.len()];
                let (r0, c0) = ((tile / self.tiles_x) * TILE, (tile % self.tiles_x) * TILE);
                let (r1, c1) = ((r0 + TILE).min(h), (c0 + TILE).min(w));
                for row in r0..r1 {
                    for col in c0..c1 {
                        let pix = row * w + col;
                        let gc = d_color.pixel(row, col);
                        let gd = d_depth.map_or(0.0, |d| d.get(row, col, 0));
                        let ga = d_alpha.map_or(0.0, |d| d.get(row, col, 0));
                        let t_final = self.final_t[pix];
                        let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
                        let mut t = t_final;
                        let mut behind_c = [0.0; 3];
                        let mut behind_d = 0.0;
                        for k in (0..self.n_contrib[pix] as usize).rev() {
                            let p = &prims[list[k] as usize];
                            let Some((alpha, g, clamped)) = p.alpha_at(px, py, min_alpha) else {
                                continue;
                            };
                            let inv = 1.0 / (1.0 - alpha);
                            t *= inv;
                            let wgt = alpha * t;
                            let mut d_alpha_k = ga * t_final * inv;
                            for ch in 0..3 {
                                d_alpha_k += gc[ch] * (p.color[ch] * t - behind_c[ch] * inv);
                                acc[k][SCOLOR + ch] += gc[ch] * wgt;
                                behind_c[ch] += p.color[ch] * wgt;
                            }
                            d_alpha_k += gd * (p.dist * t - behind_d * inv);
                            acc[k][SDIST] += gd * wgt;
                            behind_d += p.dist * wgt;
                            if clamped {
                                continue;
                            }
                            acc[k][SOPACITY] += d_alpha_k * g;
                            let d_power = d_alpha_k * alpha;
                            let (dx, dy) = (px - p.x, py - p.y);
                            let [a, b, c] = p.conic;
                            acc[k][SX] += d_power * (a * dx + b * dy);
                            acc[k][SY] += d_power * (b * dx + c * dy);
                            acc[k][SCONIC] += d_power * (-0.5 * dx * dx);
                            acc[k][SCONIC + 1] += d_power * (-dx * dy);
                            acc[k][SCONIC + 2] += d_power * (-0.5 * dy * dy);
                        }
                    }
                }
                acc
            })
            .collect();

        let mut screen = vec![[0.0; SCREEN]; prims.len()];
        for (list, acc) in self.tiles.iter().zip(&partials) {
            for (&pi, a) in list.iter().zip(acc) {
                for (s, v) in screen[pi as usize].iter_mut().zip(a) {
                    *s += v;
                }
            }
        }

        let cc = CamConsts::new(&self.camera);
        let per_prim: Vec<(usize, [f64; PARAM_COUNT])> = prims
            .par_iter()
            .zip(&screen)
            .map(|(p, s)| {
                let g = &gaussians[p.index];
                let j = project_jet(g, &cc);
                let outs = [
                    (j.x, s[SX]),
                    (j.y, s[SY]),
                    (j.conic[0], s[SCONIC]),
                    (j.conic[1], s[SCONIC + 1]),
                    (j.conic[2], s[SCONIC + 2]),
                    (j.dist, s[SDIST]),
                ];
                let mut grad = [0.0; PARAM_COUNT];
                for (jet, gout) in outs {
                    for i in 0..GEOM_PARAMS {
                        grad[i] += gout * jet.d[i];
                    }
                }
                grad[layout::OPACITY] = s[SOPACITY] * p.opacity * (1.0 - p.opacity);
                grad[layout::COLOR].copy_from_slice(&s[SCOLOR..SCOLOR + 3]);
                (p.index, grad)
            })
            .collect();

        let mut grads = vec![[0.0; PARAM_COUNT]; gaussians.len()];
        for (i, g) in per_prim {
            grads[i] = g;
        }
        grads
    }
}
