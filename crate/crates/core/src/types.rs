//! Domain types shared across the crate and box-overlap primitives.

use std::f64::consts::PI;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headmap::HeadMap;

/// Axis-aligned box in image pixels, origin top-left, stored as corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from the `[x, y, width, height]` form used by some annotation tools.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Grows the box about its center by `factor` (1.0 keeps it unchanged).
    pub fn expand(&self, factor: f64) -> Result<Self> {
        let (cx, cy) = self.center();
        let hw = 0.5 * self.width() * factor;
        let hh = 0.5 * self.height() * factor;
        Self::new(cx - hw, cy - hh, cx + hw, cy + hh)
    }

    /// Corner-wise linear interpolation, `t = 0` gives `self`.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        Self {
            x1: mix(self.x1, other.x1),
            y1: mix(self.y1, other.y1),
            x2: mix(self.x2, other.x2),
            y2: mix(self.y2, other.y2),
        }
    }

    fn intersection_area(&self, other: &Self) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

/// Intersection over union.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection divided by the head's own area; 1 when the head lies inside `body`.
pub fn intersection_over_head_area(head: &BoundingBox, body: &BoundingBox) -> f64 {
    (head.intersection_area(body) / head.area()).clamp(0.0, 1.0)
}

/// Placement of a frame in a reference coordinate system. Head maps and
/// geometry tuples only depend on positions relative to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: f64,
    pub height: f64,
}

impl FrameGeometry {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "frame size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            origin_x: 0.0,
            origin_y: 0.0,
            width,
            height,
        })
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            origin_x: self.origin_x + dx,
            origin_y: self.origin_y + dy,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadDetection {
    pub frame_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

impl HeadDetection {
    pub fn new(frame_index: usize, bbox: BoundingBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidValue(format!(
                "detection score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            frame_index,
            bbox,
            score,
        })
    }
}

/// A head followed over consecutive frames. Frames filled by interpolation
/// carry `interpolated_mask == true` and no detection index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrack {
    pub track_id: usize,
    pub start_frame: usize,
    pub boxes: Vec<BoundingBox>,
    pub per_frame_scores: Vec<f64>,
    pub interpolated_mask: Vec<bool>,
    /// Index of the claimed detection within its frame's (filtered) list.
    pub detections: Vec<Option<usize>>,
}

impl HeadTrack {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Last frame index covered, inclusive.
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len() - 1
    }

    pub fn covers(&self, frame: usize) -> bool {
        frame >= self.start_frame && frame <= self.end_frame()
    }

    pub fn box_at(&self, frame: usize) -> Option<&BoundingBox> {
        if self.covers(frame) {
            self.boxes.get(frame - self.start_frame)
        } else {
            None
        }
    }

    /// Mean score of the frames backed by a real detection.
    pub fn score(&self) -> f64 {
        let (sum, n) = self
            .per_frame_scores
            .iter()
            .zip(&self.interpolated_mask)
            .filter(|(_, &interp)| !interp)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.boxes.len();
        if n == 0
            || self.per_frame_scores.len() != n
            || self.interpolated_mask.len() != n
            || self.detections.len() != n
        {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} (>= 1) entries per field"),
                got: format!(
                    "scores {}, mask {}, detections {}",
                    self.per_frame_scores.len(),
                    self.interpolated_mask.len(),
                    self.detections.len()
                ),
            });
        }
        Ok(())
    }
}

/// Head orientation in radians, each angle in `[-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PoseAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        for (name, v) in [("yaw", yaw), ("pitch", pitch), ("roll", roll)] {
            if !(-PI..=PI).contains(&v) {
                return Err(Error::InvalidValue(format!("{name} {v} outside [-pi, pi]")));
            }
        }
        Ok(Self { yaw, pitch, roll })
    }

    pub fn normalized(&self) -> NormalizedPose {
        NormalizedPose {
            yaw: self.yaw / PI,
            pitch: self.pitch / PI,
            roll: self.roll / PI,
        }
    }
}

/// Pose in units of pi radians, the scale the network regresses and the
/// pose losses operate on. Positive yaw means the head faces image-right.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl NormalizedPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Converts back to radians, clamping each angle into `[-pi, pi]`.
    pub fn to_radians(self) -> PoseAngles {
        let c = |v: f64| (v * PI).clamp(-PI, PI);
        PoseAngles {
            yaw: c(self.yaw),
            pitch: c(self.pitch),
            roll: c(self.roll),
        }
    }

    /// Pose of the horizontally mirrored head.
    pub fn mirrored(self) -> Self {
        Self::new(-self.yaw, self.pitch, -self.roll)
    }
}

/// Relative placement of the left and right head: displacement in a
/// frame-normalized `(1, 1)` system plus the left/right scale ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryTuple {
    pub dx: f64,
    pub dy: f64,
    pub scale_ratio: f64,
}

impl GeometryTuple {
    pub fn to_array(self) -> [f64; 3] {
        [self.dx, self.dy, self.scale_ratio]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    NotLaeo,
    Laeo,
    Ambiguous,
}

impl PairLabel {
    /// Class index used by the classifier, `None` for ambiguous pairs.
    pub fn class(self) -> Option<usize> {
        match self {
            PairLabel::NotLaeo => Some(0),
            PairLabel::Laeo => Some(1),
            PairLabel::Ambiguous => None,
        }
    }
}

/// Default number of frames per head-crop sequence.
pub const DEFAULT_K: usize = 10;

/// Side of the square head crops and head maps.
pub const CROP_SIZE: u32 = 64;

/// Two aligned head-crop sequences plus the pair's spatial context.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPairSample {
    pub left_crops: Vec<RgbImage>,
    pub right_crops: Vec<RgbImage>,
    pub head_map: HeadMap,
    pub geometry: GeometryTuple,
    pub label: PairLabel,
    /// Boxes of the two heads in the central frame.
    pub left_box: BoundingBox,
    pub right_box: BoundingBox,
}

impl TrackPairSample {
    pub fn k(&self) -> usize {
        self.left_crops.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.left_crops.len();
        if k == 0 || self.right_crops.len() != k {
            return Err(Error::ShapeMismatch {
                expected: format!("{k} (>= 1) crops per side"),
                got: format!("{} left, {} right", k, self.right_crops.len()),
            });
        }
        for c in self.left_crops.iter().chain(&self.right_crops) {
            if c.dimensions() != (CROP_SIZE, CROP_SIZE) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{CROP_SIZE}x{CROP_SIZE} crops"),
                    got: format!("{}x{}", c.width(), c.height()),
                });
            }
        }
        let (lx, ly) = self.left_box.center();
        let (rx, ry) = self.right_box.center();
        if lx > rx || (lx == rx && ly > ry) {
            return Err(Error::InvalidValue(
                "left head center lies to the right of the right head".into(),
            ));
        }
        Ok(())
    }
}

/// Orders two boxes by central-frame center x, ties broken by smaller y.
/// Returns `true` when `a` is the left head.
pub fn is_left_of(a: &BoundingBox, b: &BoundingBox) -> bool {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ax < bx || (ax == bx && ay <= by)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        let b = bb(3.0, 4.0, 17.5, 20.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(20., 20., 30., 30.)), 0.0);
        // inter 50, union 150
        let v = iou(&bb(0., 0., 10., 10.), &bb(5., 0., 15., 10.));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(10., 0., 20., 10.)), 0.0);
    }

    #[test]
    fn ioha_examples() {
        let body = bb(0., 0., 100., 100.);
        assert_eq!(intersection_over_head_area(&bb(10., 10., 20., 20.), &body), 1.0);
        assert_eq!(
            intersection_over_head_area(&bb(200., 0., 210., 10.), &body),
            0.0
        );
        let v = intersection_over_head_area(&bb(0., 0., 10., 10.), &bb(5., 0., 100., 100.));
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BoundingBox::new(0., 0., 0., 10.).is_err());
        assert!(BoundingBox::new(0., 5., 10., 4.).is_err());
        assert!(BoundingBox::new(f64::NAN, 0., 1., 1.).is_err());
        assert!(serde_json::from_str::<BoundingBox>("[1, 1, 0, 2]").is_err());
    }

    #[test]
    fn xywh_conversion() {
        let b = BoundingBox::from_xywh(2.0, 3.0, 4.0, 5.0).unwrap();
        assert_eq!(b.corners(), [2.0, 3.0, 6.0, 8.0]);
    }

    #[test]
    fn pose_range_checked() {
        assert!(PoseAngles::new(3.2, 0.0, 0.0).is_err());
        let p = PoseAngles::new(PI / 2.0, 0.0, -PI / 4.0).unwrap();
        let n = p.normalized();
        assert!((n.yaw - 0.5).abs() < 1e-15 && (n.roll + 0.25).abs() < 1e-15);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox::from_xywh(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn overlaps_in_unit_range_and_symmetric(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            let h = intersection_over_head_area(&a, &b);
            prop_assert!((0.0..=1.0).contains(&h));
        }
    }
}
