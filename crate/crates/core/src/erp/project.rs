//! Gnomonic (tangent-plane) resampling between ERP frames and perspective
//! views.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{lon_lat_for_dir, ErpDims, ErpFrame, PerspectiveCamera};
use crate::image::{BoolGrid, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Nearest,
    #[default]
    Bilinear,
}

/// Samples an ERP frame along `dir`, writing one value per channel into
/// `out`. Bilinear sampling wraps across the longitude seam and clamps at
/// the poles.
pub fn sample_erp(frame: &ErpFrame, dir: &Vector3<f64>, sampling: Sampling, out: &mut [f64]) {
    let dims = frame.dims();
    match sampling {
        Sampling::Nearest => {
            let (u, v) = dims.pixel_index_for_dir(dir);
            out.copy_from_slice(frame.pixel(v, u));
        }
        Sampling::Bilinear => {
            let (lon, lat) = lon_lat_for_dir(dir);
            let (uc, vc) = dims.pixel_for_lon_lat(lon, lat);
            bilinear_wrapped(frame, uc, vc, out);
        }
    }
}

/// Bilinear lookup at a continuous ERP coordinate: horizontal wrap, vertical
/// clamp.
pub(crate) fn bilinear_wrapped(img: &Image, uc: f64, vc: f64, out: &mut [f64]) {
    let w = img.width() as isize;
    let h = img.height() as isize;
    let u0 = uc.floor();
    let fu = uc - u0;
    let u0 = (u0 as isize).rem_euclid(w) as usize;
    let u1 = (u0 + 1) % w as usize;
    let vcl = vc.clamp(0.0, (h - 1) as f64);
    let v0 = (vcl.floor() as usize).min(h as usize - 1);
    let v1 = (v0 + 1).min(h as usize - 1);
    let fv = vcl - v0 as f64;
    for (ch, o) in out.iter_mut().enumerate() {
        let a = img.get(v0, u0, ch) * (1.0 - fu) + img.get(v0, u1, ch) * fu;
        let b = img.get(v1, u0, ch) * (1.0 - fu) + img.get(v1, u1, ch) * fu;
        *o = a * (1.0 - fv) + b * fv;
    }
}

/// Bilinear lookup clamped to the image on both axes.
pub(crate) fn bilinear_clamped(img: &Image, row: f64, col: f64, out: &mut [f64]) {
    let h = img.height();
    let w = img.width();
    let r = row.clamp(0.0, (h - 1) as f64);
    let c = col.clamp(0.0, (w - 1) as f64);
    let r0 = (r.floor() as usize).min(h - 1);
    let c0 = (c.floor() as usize).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    for (ch, o) in out.iter_mut().enumerate() {
        let a = img.get(r0, c0, ch) * (1.0 - fc) + img.get(r0, c1, ch) * fc;
        let b = img.get(r1, c0, ch) * (1.0 - fc) + img.get(r1, c1, ch) * fc;
        *o = a * (1.0 - fr) + b * fr;
    }
}

/// Renders the view of `cam` by sampling `src` along every pixel ray.
pub fn project_erp_to_perspective(
    src: &ErpFrame,
    cam: &PerspectiveCamera,
    sampling: Sampling,
) -> Image {
    let n = cam.size();
    let ch = src.channels();
    let rot = cam.rotation();
    let mut out = Image::new(n, n, ch);
    out.data_mut()
        .par_chunks_mut(n * ch)
        .enumerate()
        .for_each(|(row, line)| {
            for col in 0..n {
                let dir = cam.ray_with(&rot, row as f64, col as f64);
                sample_erp(src, &dir, sampling, &mut line[col * ch..(col + 1) * ch]);
            }
        });
    out
}

/// Splats a perspective view back onto an ERP grid. Pixels whose direction
/// falls inside the camera frustum are filled and flagged in the returned
/// coverage mask; everything else stays zero.
pub fn project_perspective_to_erp(
    src: &Image,
    cam: &PerspectiveCamera,
    dst: ErpDims,
    sampling: Sampling,
) -> (ErpFrame, BoolGrid) {
    let ch = src.channels();
    let rot = cam.rotation();
    let w = dst.width();
    let size = cam.size();
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..dst.height())
        .into_par_iter()
        .map(|v| {
            let mut vals = vec![0.0; w * ch];
            let mut hit = vec![false; w];
            for u in 0..w {
                let (lon, lat) = dst.lon_lat(u as f64, v as f64);
                let dir = super::dir_for_lon_lat(lon, lat);
                let Some((x, y)) = cam.tangent_with(&rot, &dir) else {
                    continue;
                };
                if x.abs() > 1.0 || y.abs() > 1.0 {
                    continue;
                }
                let s = size as f64;
                let row = 0.5 * (1.0 - y) * s - 0.5;
                let col = 0.5 * (x + 1.0) * s - 0.5;
                let px = &mut vals[u * ch..(u + 1) * ch];
                match sampling {
                    Sampling::Nearest => {
                        let r = ((row + 0.5).floor().max(0.0) as usize).min(size - 1);
                        let c = ((col + 0.5).floor().max(0.0) as usize).min(size - 1);
                        px.copy_from_slice(src.pixel(r, c));
                    }
                    Sampling::Bilinear => bilinear_clamped(src, row, col, px),
                }
                hit[u] = true;
            }
            (vals, hit)
        })
        .collect();

    let mut frame = ErpFrame::zeros(dst, ch);
    let mut mask = BoolGrid::new(dst.height(), w);
    for (v, (vals, hit)) in rows.into_iter().enumerate() {
        let start = frame.index(v, 0, 0);
        frame.image_mut().data_mut()[start..start + w * ch].copy_from_slice(&vals);
        for (u, h) in hit.into_iter().enumerate() {
            mask.set(v, u, h);
        }
    }
    (frame, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erp::{dir_for_erp_pixel, ViewRig};
    use std::f64::consts::FRAC_PI_4;

    fn dims(h: usize) -> ErpDims {
        ErpDims::new(h).unwrap()
    }

    #[test]
    fn constant_frame_projects_to_constant_view() {
        let src = ErpFrame::new(Image::filled(32, 64, 2, 0.375)).unwrap();
        let cam = PerspectiveCamera::from_degrees(33.0, 71.0, 80.0, 17).unwrap();
        for s in [Sampling::Nearest, Sampling::Bilinear] {
            let out = project_erp_to_perspective(&src, &cam, s);
            assert!(out.data().iter().all(|&v| (v - 0.375).abs() < 1e-15));
        }
    }

    #[test]
    fn central_row_footprint_spans_plus_minus_45_degrees() {
        // Brute force: the longitude of every pixel ray on the middle row.
        let cam = PerspectiveCamera::from_degrees(0.0, 0.0, 90.0, 129).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for col in 0..129 {
            let (lon, lat) = lon_lat_for_dir(&cam.pixel_ray(64, col));
            assert!(lat.abs() < 1e-12);
            lo = lo.min(lon);
            hi = hi.max(lon);
        }
        // Pixel centres stop half a pixel short of the frustum edge.
        let edge = (1.0 - 1.0 / 129.0f64).atan();
        assert!((hi - edge).abs() < 1e-12 && (lo + edge).abs() < 1e-12);
        assert!(hi < FRAC_PI_4 && (FRAC_PI_4 - hi) < 0.01);
        // The continuous frustum edge is exactly ±45°.
        let d = cam.ray(64.0, 128.5);
        assert!((lon_lat_for_dir(&d).0 - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn coverage_is_empty_at_high_latitude() {
        let cam = PerspectiveCamera::from_degrees(0.0, 0.0, 90.0, 32).unwrap();
        let d = dims(90);
        let (_, mask) = project_perspective_to_erp(&Image::new(32, 32, 1), &cam, d, Sampling::Nearest);
        let mut checked = 0;
        for v in 0..d.height() {
            let (_, lat) = d.lon_lat(0.0, v as f64);
            if lat.abs() >= 80f64.to_radians() {
                assert!((0..d.width()).all(|u| !mask.get(v, u)), "row {v}");
                checked += 1;
            }
        }
        assert!(checked > 0);
        assert!(mask.count() > 0);
    }

    #[test]
    fn narrow_fov_covers_only_the_neighbourhood() {
        let cam = PerspectiveCamera::from_degrees(30.0, 10.0, 2.0, 8).unwrap();
        let d = dims(180);
        let (_, mask) = project_perspective_to_erp(&Image::new(8, 8, 1), &cam, d, Sampling::Nearest);
        assert!(mask.count() > 0);
        let centre = crate::erp::dir_for_lon_lat(30f64.to_radians(), 10f64.to_radians());
        for v in 0..d.height() {
            for u in 0..d.width() {
                if mask.get(v, u) {
                    let p = dir_for_erp_pixel(d, u, v).unwrap();
                    assert!(p.angle(&centre) < 2f64.to_radians());
                }
            }
        }
    }

    #[test]
    fn nearest_round_trip_is_exact_on_covered_pixels() {
        let d = dims(64);
        let src = ErpFrame::from_dir_fn(d, 1, |dir, _| (dir.x * 7.0).sin() + dir.y * 3.0 + dir.z);
        let cam = PerspectiveCamera::from_degrees(20.0, 10.0, 90.0, 4 * 32).unwrap();
        let view = project_erp_to_perspective(&src, &cam, Sampling::Nearest);
        let (back, mask) = project_perspective_to_erp(&view, &cam, d, Sampling::Nearest);
        let mut exact = 0;
        for v in 0..d.height() {
            for u in 0..d.width() {
                if mask.get(v, u) && back.get(v, u, 0) == src.get(v, u, 0) {
                    exact += 1;
                }
            }
        }
        assert!(exact as f64 >= 0.99 * mask.count() as f64, "{exact}/{}", mask.count());
    }

    #[test]
    fn azimuth_shift_commutes_with_roll() {
        let d = dims(32);
        let src = ErpFrame::from_dir_fn(d, 1, |dir, _| dir.x + 2.0 * dir.y * dir.z);
        let cam = PerspectiveCamera::from_degrees(10.0, 5.0, 90.0, 24).unwrap();
        let shift = 8usize; // 45° of longitude
        let rolled = crate::erp::roll_columns(&src, shift as isize);
        let rolled = ErpFrame::new(rolled).unwrap();
        let cam2 = cam.rotated(std::f64::consts::TAU * shift as f64 / d.width() as f64);
        for s in [Sampling::Nearest, Sampling::Bilinear] {
            let a = project_erp_to_perspective(&src, &cam, s);
            let b = project_erp_to_perspective(&rolled, &cam2, s);
            let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            match s {
                Sampling::Nearest => assert_eq!(err, 0.0),
                Sampling::Bilinear => assert!(err < 1e-6, "{err}"),
            }
        }
    }

    #[test]
    fn four_view_rig_covers_the_horizon_band() {
        let d = dims(64);
        let rig = ViewRig::four_view(32).unwrap();
        let mut union = BoolGrid::new(d.height(), d.width());
        for cam in rig.cameras() {
            let (_, m) = project_perspective_to_erp(&Image::new(32, 32, 1), cam, d, Sampling::Nearest);
            union = union.union(&m);
        }
        let band = (1.0 / 2f64.sqrt()).atan();
        for v in 0..d.height() {
            let (_, lat) = d.lon_lat(0.0, v as f64);
            if lat.abs() <= band {
                assert!((0..d.width()).all(|u| union.get(v, u)), "row {v}");
            }
        }
    }
}
