//! ERP-guided attention masks between a panorama token grid and a
//! perspective token grid.

use super::{ErpDims, PerspectiveCamera};

/// Boolean `[rows × cols]` matrix. Built by
/// [`build_correspondence_mask`], rows index panorama tokens (`v * W + u`)
/// and columns index perspective tokens (`row * size + col`);
/// [`transposed`](Self::transposed) swaps the roles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrespondenceMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl CorrespondenceMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        CorrespondenceMask {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        CorrespondenceMask {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.bits[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.cols + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn transposed(&self) -> CorrespondenceMask {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn row_any(&self, row: usize) -> bool {
        self.bits[row * self.cols..(row + 1) * self.cols].iter().any(|&b| b)
    }

    pub fn col_any(&self, col: usize) -> bool {
        (0..self.rows).any(|r| self.get(r, col))
    }
}

/// Builds the panorama/perspective correspondence for one tangent camera.
///
/// `pano` is the panorama token grid and `cam.size()` is the side of the
/// perspective token grid. Perspective token `q` is linked to panorama token
/// `p` when the ray through the centre of `q` lands in `p`'s cell or in one
/// of its eight neighbours (wrapping in longitude, clamped at the poles).
pub fn build_correspondence_mask(pano: ErpDims, cam: &PerspectiveCamera) -> CorrespondenceMask {
    let s = cam.size();
    let (h, w) = (pano.height(), pano.width());
    let rot = cam.rotation();
    let mut mask = CorrespondenceMask::new(h * w, s * s);
    for i in 0..s {
        for j in 0..s {
            let q = i * s + j;
            let dir = cam.ray_with(&rot, i as f64, j as f64);
            let (u, v) = pano.pixel_index_for_dir(&dir);
            for dv in -1isize..=1 {
                let vv = v as isize + dv;
                if vv < 0 || vv >= h as isize {
                    continue;
                }
                for du in -1isize..=1 {
                    let uu = (u as isize + du).rem_euclid(w as isize) as usize;
                    mask.set(vv as usize * w + uu, q, true);
                }
            }
        }
    }
    mask
}
