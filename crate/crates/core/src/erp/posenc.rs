//! Direction-based positional encodings shared by panorama and perspective
//! token grids.

use nalgebra::Vector3;

use super::{dir_for_lon_lat, lon_lat_for_dir};
use crate::error::{Error, Result};

/// Highest angular frequency used by [`spherical_pos_encoding`].
pub const MAX_ENCODING_FREQUENCY: f64 = 4.0;

/// Per-token encoding vectors, `tokens × dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalPosEncoding {
    dim: usize,
    values: Vec<f64>,
}

impl SphericalPosEncoding {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.values[token * self.dim..(token + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `(axis, frequency)` of each sin/cos pair of a `dim`-wide encoding.
fn pair_schedule(dim: usize) -> Vec<(usize, f64)> {
    let pairs = dim / 2;
    let levels = pairs.div_ceil(3);
    (0..pairs)
        .map(|m| {
            let level = m / 3;
            let freq = if levels <= 1 {
                1.0
            } else {
                MAX_ENCODING_FREQUENCY.powf(level as f64 / (levels - 1) as f64)
            };
            (m % 3, freq)
        })
        .collect()
}

/// Encodes token directions as sinusoids of their spherical position.
///
/// The base coordinates are `(cos φ·sin λ, sin φ, cos φ·cos λ)`: longitude
/// enters through `(sin λ, cos λ)`, so the encoding is continuous across the
/// ±180° seam. Each of the `dim / 2` sin/cos pairs applies one of those three
/// coordinates at a frequency from a geometric ladder between 1 and
/// [`MAX_ENCODING_FREQUENCY`]. The result depends only on the direction, so
/// a panorama token and a perspective token looking the same way get the same
/// vector.
pub fn spherical_pos_encoding(token_dirs: &[Vector3<f64>], dim: usize) -> Result<SphericalPosEncoding> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::arg(format!("encoding dimension must be even and positive, got {dim}")));
    }
    let schedule = pair_schedule(dim);
    let mut values = Vec::with_capacity(token_dirs.len() * dim);
    for (i, d) in token_dirs.iter().enumerate() {
        let n = d.norm();
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(Error::arg(format!("token direction {i} has norm {n}, expected 1")));
        }
        let (lon, lat) = lon_lat_for_dir(d);
        let base = dir_for_lon_lat(lon, lat);
        for &(axis, freq) in &schedule {
            let (s, c) = (freq * base[axis]).sin_cos();
            values.push(s);
            values.push(c);
        }
    }
    Ok(SphericalPosEncoding { dim, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn odd_dimension_and_non_unit_inputs_are_rejected() {
        let d = Vector3::new(0.0, 0.0, 1.0);
        assert!(spherical_pos_encoding(&[d], 7).is_err());
        assert!(spherical_pos_encoding(&[d * 2.0], 8).is_err());
    }

    #[test]
    fn identical_directions_match() {
        let d = dir_for_lon_lat(0.3, -0.2);
        let e = spherical_pos_encoding(&[d, d], 24).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn continuous_across_the_seam() {
        for eps in [1e-3, 1e-5, 1e-7] {
            let a = dir_for_lon_lat(-PI + eps, 0.4);
            let b = dir_for_lon_lat(PI - eps, 0.4);
            let e = spherical_pos_encoding(&[a, b], 36).unwrap();
            let gap = dist(e.row(0), e.row(1));
            // Lipschitz constant bounded by the frequency ladder.
            assert!(gap <= 2.0 * eps * MAX_ENCODING_FREQUENCY * 6.0, "eps {eps}: {gap}");
        }
    }

    fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            let mut r = vec![0.0; v.len()];
            for (rank, &i) in idx.iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        }
        let (rx, ry) = (ranks(xs), ranks(ys));
        let n = xs.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
        let var: f64 = rx.iter().map(|a| (a - mean) * (a - mean)).sum();
        cov / var
    }

    #[test]
    fn encoding_distance_tracks_angular_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut angles = Vec::new();
        let mut gaps = Vec::new();
        for _ in 0..1000 {
            let a = loop {
                let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let n: f64 = v.norm();
                if n > 0.1 && n <= 1.0 {
                    break v / n;
                }
            };
            // Random direction within 10° of `a`.
            let axis = a.cross(&Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).normalize();
            let theta = rng.random_range(0.0..10f64.to_radians());
            let b = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), theta) * a;
            let e = spherical_pos_encoding(&[a, b.normalize()], 48).unwrap();
            angles.push(a.angle(&b));
            gaps.push(dist(e.row(0), e.row(1)));
        }
        let rho = spearman(&angles, &gaps);
        assert!(rho > 0.99, "rank correlation {rho}");
    }
}
