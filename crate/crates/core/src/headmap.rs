//! Head-map rendering: a 64x64 three-channel image with one isotropic
//! Gaussian per head of the central frame. Channel 0 holds the left target
//! head, channel 1 the right target head and channel 2 every other head.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, FrameGeometry, GeometryTuple};

pub const MAP_SIZE: usize = 64;
pub const MAP_CHANNELS: usize = 3;

const TRUNCATE_SIGMAS: f64 = 3.0;
const MIN_VALUE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadMapSpec {
    /// Gaussian sigma as a fraction of the head width (in map units).
    pub sigma_factor: f64,
}

impl Default for HeadMapSpec {
    fn default() -> Self {
        Self { sigma_factor: 0.5 }
    }
}

impl HeadMapSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_factor > 0.0 && self.sigma_factor.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "sigma_factor must be positive, got {}",
                self.sigma_factor
            )));
        }
        Ok(())
    }
}

/// Channel-last `64 x 64 x 3` map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMap {
    data: Vec<f64>,
}

impl HeadMap {
    pub const LEN: usize = MAP_SIZE * MAP_SIZE * MAP_CHANNELS;

    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; Self::LEN],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != Self::LEN {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", Self::LEN),
                got: data.len().to_string(),
            });
        }
        Ok(Self { data })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(y * MAP_SIZE + x) * MAP_CHANNELS + channel]
    }

    /// Map with the two target channels exchanged.
    pub fn swap_targets(&self) -> Self {
        let mut data = self.data.clone();
        for px in data.chunks_exact_mut(MAP_CHANNELS) {
            px.swap(0, 1);
        }
        Self { data }
    }

    /// Horizontal mirror of the map, with the target channels exchanged so
    /// that the mirrored left head is again in channel 0.
    pub fn mirrored(&self) -> Self {
        let mut out = Self::zeros();
        for y in 0..MAP_SIZE {
            for x in 0..MAP_SIZE {
                let src = (y * MAP_SIZE + (MAP_SIZE - 1 - x)) * MAP_CHANNELS;
                let dst = (y * MAP_SIZE + x) * MAP_CHANNELS;
                out.data[dst] = self.data[src + 1];
                out.data[dst + 1] = self.data[src];
                out.data[dst + 2] = self.data[src + 2];
            }
        }
        out
    }

    /// Location and value of the channel maximum (first in raster order on ties).
    pub fn argmax(&self, channel: usize) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for y in 0..MAP_SIZE {
            for x in 0..MAP_SIZE {
                let v = self.get(channel, y, x);
                if v > best.2 {
                    best = (y, x, v);
                }
            }
        }
        best
    }

    /// 8-bit export: blue for the left head, green for the right, red for the rest.
    pub fn to_image(&self) -> RgbImage {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbImage::from_fn(MAP_SIZE as u32, MAP_SIZE as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([q(self.get(2, y, x)), q(self.get(1, y, x)), q(self.get(0, y, x))])
        })
    }
}

fn to_map_coords(frame: &FrameGeometry, x: f64, y: f64) -> (f64, f64) {
    let s = MAP_SIZE as f64;
    (
        (x - frame.origin_x) * s / frame.width,
        (y - frame.origin_y) * s / frame.height,
    )
}

fn splat(buf: &mut [f64], channel: usize, cx: f64, cy: f64, sigma: f64) {
    let reach = TRUNCATE_SIGMAS * sigma;
    let lo = |c: f64| ((c - reach).floor().max(0.0)) as usize;
    let hi = |c: f64| ((c + reach).ceil().min((MAP_SIZE - 1) as f64)).max(-1.0);
    let (x_hi, y_hi) = (hi(cx), hi(cy));
    if x_hi < 0.0 || y_hi < 0.0 {
        return;
    }
    let two_var = 2.0 * sigma * sigma;
    for y in lo(cy)..=y_hi as usize {
        for x in lo(cx)..=x_hi as usize {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            if d2 > reach * reach {
                continue;
            }
            let v = (-d2 / two_var).exp();
            if v >= MIN_VALUE {
                buf[(y * MAP_SIZE + x) * MAP_CHANNELS + channel] += v;
            }
        }
    }
}

/// Renders the head map for the pair `(left_idx, right_idx)` among the heads
/// of one frame. Pixel `(x, y)` of the map sits at map coordinate `(x, y)`,
/// so a head centered in the frame peaks at pixel `(32, 32)`.
pub fn render_head_map(
    all_heads: &[BoundingBox],
    left_idx: usize,
    right_idx: usize,
    frame: &FrameGeometry,
    spec: &HeadMapSpec,
) -> Result<HeadMap> {
    spec.validate()?;
    for idx in [left_idx, right_idx] {
        if idx >= all_heads.len() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                len: all_heads.len(),
            });
        }
    }
    if left_idx == right_idx {
        return Err(Error::InvalidValue(
            "left and right head indices must differ".into(),
        ));
    }
    let mut buf = vec![0.0; HeadMap::LEN];
    for (i, head) in all_heads.iter().enumerate() {
        let channel = if i == left_idx {
            0
        } else if i == right_idx {
            1
        } else {
            2
        };
        let (cx, cy) = head.center();
        let (mx, my) = to_map_coords(frame, cx, cy);
        let sigma = spec.sigma_factor * head.width() * MAP_SIZE as f64 / frame.width;
        splat(&mut buf, channel, mx, my, sigma);
    }
    for v in &mut buf {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(HeadMap { data: buf })
}

/// Displacement from the left to the right head center in frame-normalized
/// units, and the left/right width ratio.
pub fn geometry_tuple(
    left: &BoundingBox,
    right: &BoundingBox,
    frame: &FrameGeometry,
) -> GeometryTuple {
    let (lx, ly) = left.center();
    let (rx, ry) = right.center();
    GeometryTuple {
        dx: (rx - lx) / frame.width,
        dy: (ry - ly) / frame.height,
        scale_ratio: left.width() / right.width(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn frame(w: f64, h: f64) -> FrameGeometry {
        FrameGeometry::new(w, h).unwrap()
    }

    #[test]
    fn no_bystanders_leaves_channel_two_empty() {
        let heads = [bb(10., 10., 50., 50.), bb(100., 10., 140., 50.)];
        let m = render_head_map(&heads, 0, 1, &frame(200., 100.), &HeadMapSpec::default()).unwrap();
        assert!((0..64).all(|y| (0..64).all(|x| m.get(2, y, x) == 0.0)));
    }

    #[test]
    fn centered_head_peaks_at_map_center() {
        let heads = [bb(280., 220., 360., 260.), bb(0., 0., 10., 10.)];
        let m = render_head_map(&heads, 0, 1, &frame(640., 480.), &HeadMapSpec::default()).unwrap();
        let (y, x, v) = m.argmax(0);
        assert_eq!((y, x), (32, 32));
        assert_eq!(v, 1.0);
    }

    #[test]
    fn bystander_lies_between_targets() {
        // Two targets facing each other with a third head in between.
        let heads = [
            bb(100., 200., 180., 280.),
            bb(1100., 200., 1180., 280.),
            bb(600., 190., 700., 290.),
        ];
        let m = render_head_map(&heads, 0, 1, &frame(1280., 720.), &HeadMapSpec::default()).unwrap();
        let (_, x0, _) = m.argmax(0);
        let (_, x1, _) = m.argmax(1);
        let (_, x2, v2) = m.argmax(2);
        assert!(v2 > 0.0);
        assert!(x0 < x2 && x2 < x1, "{x0} {x2} {x1}");
        // all channel-2 mass strictly between the target peaks
        for y in 0..64 {
            for x in 0..64 {
                if m.get(2, y, x) > 0.0 {
                    assert!(x > x0 && x < x1);
                }
            }
        }
    }

    #[test]
    fn bad_indices_rejected() {
        let heads = [bb(0., 0., 10., 10.)];
        let f = frame(100., 100.);
        assert!(matches!(
            render_head_map(&heads, 0, 3, &f, &HeadMapSpec::default()),
            Err(Error::IndexOutOfRange { .. })
        ));
        let heads = [bb(0., 0., 10., 10.), bb(20., 0., 30., 10.)];
        assert!(render_head_map(&heads, 1, 1, &f, &HeadMapSpec::default()).is_err());
    }

    #[test]
    fn geometry_examples() {
        let f = frame(400., 200.);
        let b = bb(90., 90., 110., 110.);
        assert_eq!(geometry_tuple(&b, &b, &f), GeometryTuple { dx: 0.0, dy: 0.0, scale_ratio: 1.0 });
        let l = bb(90., 90., 110., 110.); // center (100, 100) = (0.25, 0.5)
        let r = bb(290., 90., 310., 110.); // center (300, 100) = (0.75, 0.5)
        assert_eq!(geometry_tuple(&l, &r, &f), GeometryTuple { dx: 0.5, dy: 0.0, scale_ratio: 1.0 });
        let big = bb(80., 80., 120., 120.);
        assert_eq!(geometry_tuple(&big, &r, &f).scale_ratio, 2.0);
    }

    #[test]
    fn mirror_twice_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let heads: Vec<_> = (0..4)
            .map(|_| {
                let x = rng.gen_range(0.0..500.0);
                let y = rng.gen_range(0.0..300.0);
                bb(x, y, x + 60.0, y + 70.0)
            })
            .collect();
        let m = render_head_map(&heads, 1, 2, &frame(640., 360.), &HeadMapSpec::default()).unwrap();
        assert_eq!(m.mirrored().mirrored(), m);
    }
}
