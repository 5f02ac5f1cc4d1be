//! Head crops: cutting a boxed region out of a frame and turning crop
//! sequences into network input.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, CROP_SIZE};

/// Bilinear resample of `bbox` onto a `CROP_SIZE` square. Samples falling
/// outside the frame read as black (zero padding).
pub fn crop_and_resize(frame: &RgbImage, bbox: &BoundingBox) -> Result<RgbImage> {
    let (fw, fh) = frame.dimensions();
    if bbox.x2() <= 0.0 || bbox.y2() <= 0.0 || bbox.x1() >= fw as f64 || bbox.y1() >= fh as f64 {
        return Err(Error::BoxOutsideFrame {
            width: fw,
            height: fh,
        });
    }
    let size = CROP_SIZE as f64;
    let sx = bbox.width() / size;
    let sy = bbox.height() / size;
    let fetch = |x: i64, y: i64, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= fw as i64 || y >= fh as i64 {
            0.0
        } else {
            frame.get_pixel(x as u32, y as u32)[c] as f64
        }
    };
    let mut out = RgbImage::new(CROP_SIZE, CROP_SIZE);
    for (j, i, px) in out.enumerate_pixels_mut() {
        let src_x = bbox.x1() + (j as f64 + 0.5) * sx - 0.5;
        let src_y = bbox.y1() + (i as f64 + 0.5) * sy - 0.5;
        let x0 = src_x.floor();
        let y0 = src_y.floor();
        let fx = src_x - x0;
        let fy = src_y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let mut rgb = [0u8; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            let top = fetch(x0, y0, c) * (1.0 - fx) + fetch(x0 + 1, y0, c) * fx;
            let bottom = fetch(x0, y0 + 1, c) * (1.0 - fx) + fetch(x0 + 1, y0 + 1, c) * fx;
            *v = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(rgb);
    }
    Ok(out)
}

/// Maps pixel values `[0, 255]` to `[-1, 1]`.
#[inline]
pub fn normalize_pixel(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Flattens a crop sequence into a `K x 64 x 64 x 3` channel-last volume in `[-1, 1]`.
pub fn normalize_sequence(crops: &[RgbImage]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(crops.len() * (CROP_SIZE * CROP_SIZE * 3) as usize);
    for c in crops {
        if c.dimensions() != (CROP_SIZE, CROP_SIZE) {
            return Err(Error::ShapeMismatch {
                expected: format!("{CROP_SIZE}x{CROP_SIZE} crop"),
                got: format!("{}x{}", c.width(), c.height()),
            });
        }
        out.extend(c.as_raw().iter().map(|&v| normalize_pixel(v)));
    }
    Ok(out)
}

pub fn flip_sequence(crops: &[RgbImage]) -> Vec<RgbImage> {
    crops.iter().map(image::imageops::flip_horizontal).collect()
}
