use std::path::Path;

use image::{ImageBuffer, Rgb};

use super::{format_err, io_err};
use crate::error::{Error, Result};
use crate::image::Image;

/// Reads an 8-bit PNG as a 3-channel grid with samples in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => io_err(path)(io),
            other => format_err(path, other.to_string()),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Image::from_vec(h as usize, w as usize, 3, data)
}

/// Writes a 1- or 3-channel grid as 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let ch = img.channels();
    if ch != 1 && ch != 3 {
        return Err(Error::arg(format!("PNG export needs 1 or 3 channels, got {ch}")));
    }
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let buf = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.pixel(y as usize, x as usize);
        if ch == 1 {
            Rgb([to_u8(p[0]); 3])
        } else {
            Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
        }
    });
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => io_err(path)(io),
            other => format_err(path, other.to_string()),
        })
}
