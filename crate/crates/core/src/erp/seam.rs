//! Operators that make the ERP longitude seam behave like any other column
//! boundary.

use super::ErpFrame;
use crate::error::{Error, Result};
use crate::image::Image;

/// Rolls columns to the right by `shift` (negative rolls left), wrapping
/// around.
pub fn roll_columns(img: &Image, shift: isize) -> Image {
    let w = img.width() as isize;
    if w == 0 {
        return img.clone();
    }
    Image::from_fn(img.height(), img.width(), img.channels(), |r, c, ch| {
        let src = (c as isize - shift).rem_euclid(w) as usize;
        img.get(r, src, ch)
    })
}

/// Pads `pad` columns on each side with the columns from the opposite edge,
/// so that a convolution over the result sees the panorama as horizontally
/// periodic. Rows are left alone.
pub fn circular_pad(img: &Image, pad: usize) -> Result<Image> {
    let w = img.width();
    if pad > w {
        return Err(Error::arg(format!(
            "circular pad of {pad} exceeds frame width {w}"
        )));
    }
    Ok(Image::from_fn(img.height(), w + 2 * pad, img.channels(), |r, c, ch| {
        let src = (c + w - pad) % w;
        img.get(r, src, ch)
    }))
}

/// Turns the panorama by 90° of longitude (a roll of `W/4` columns to the
/// right). Four applications give back the input exactly.
pub fn rotate_latent_90(frame: &ErpFrame) -> Result<ErpFrame> {
    let w = frame.width();
    if w % 4 != 0 {
        return Err(Error::arg(format!(
            "90° rotation needs width divisible by 4, got {w}"
        )));
    }
    ErpFrame::new(roll_columns(frame, (w / 4) as isize))
}
