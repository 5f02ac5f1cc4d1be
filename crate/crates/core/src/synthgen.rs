//! Synthetic LAEO / not-LAEO samples built from still, pose-labeled heads.
//!
//! A still head is replicated into a K-frame sequence (middle replicas
//! untouched, the rest jittered), two such sequences are placed in a
//! sampled scene, and the pair is labeled by construction.

use std::f64::consts::PI;
use std::io::BufRead;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crop::{crop_and_resize, flip_sequence};
use crate::error::{Error, Result};
use crate::headmap::{geometry_tuple, render_head_map, HeadMapSpec};
use crate::types::{BoundingBox, FrameGeometry, PairLabel, PoseAngles, TrackPairSample, CROP_SIZE, DEFAULT_K};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledHeadImage {
    pub image: RgbImage,
    pub pose: PoseAngles,
    pub source_id: String,
}

impl LabeledHeadImage {
    /// Horizontal mirror; yaw and roll change sign.
    pub fn mirrored(&self) -> Self {
        Self {
            image: image::imageops::flip_horizontal(&self.image),
            pose: self.pose.normalized().mirrored().to_radians(),
            source_id: format!("{}#mirror", self.source_id),
        }
    }
}

/// Per-replica jitter bounds. Zoom is drawn from `[1 - max_zoom, 1 + max_zoom]`
/// and brightness scales pixels by `1 + d`, `|d| <= max_brightness_delta`.
/// `mirror` enables whole-scene horizontal mirroring of generated pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub max_shift: f64,
    pub max_zoom: f64,
    pub max_brightness_delta: f64,
    pub mirror: bool,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            max_shift: 4.0,
            max_zoom: 0.05,
            max_brightness_delta: 0.1,
            mirror: true,
        }
    }
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self {
            max_shift: 0.0,
            max_zoom: 0.0,
            max_brightness_delta: 0.0,
            mirror: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("max_shift", self.max_shift),
            ("max_zoom", self.max_zoom),
            ("max_brightness_delta", self.max_brightness_delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidValue(format!("{n} = {v} must be >= 0")));
            }
        }
        if self.max_zoom >= 1.0 {
            return Err(Error::InvalidValue("max_zoom must be < 1".into()));
        }
        Ok(())
    }
}

fn symmetric(rng: &mut impl Rng, m: f64) -> f64 {
    if m > 0.0 {
        rng.gen_range(-m..=m)
    } else {
        0.0
    }
}

/// Shifts (pixels), zooms about the image center, and scales brightness.
/// Samples beyond the border repeat the edge pixel.
pub fn perturb(img: &RgbImage, dx: f64, dy: f64, zoom: f64, brightness: f64) -> RgbImage {
    if dx == 0.0 && dy == 0.0 && zoom == 1.0 && brightness == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let at = |x: i64, y: i64, c: usize| -> f64 {
        let x = x.clamp(0, w as i64 - 1) as u32;
        let y = y.clamp(0, h as i64 - 1) as u32;
        img.get_pixel(x, y)[c] as f64
    };
    RgbImage::from_fn(w, h, |x, y| {
        let sx = (x as f64 - cx) / zoom + cx - dx;
        let sy = (y as f64 - cy) / zoom + cy - dy;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let mut px = [0u8; 3];
        for (c, v) in px.iter_mut().enumerate() {
            let top = at(x0, y0, c) * (1.0 - fx) + at(x0 + 1, y0, c) * fx;
            let bot = at(x0, y0 + 1, c) * (1.0 - fx) + at(x0 + 1, y0 + 1, c) * fx;
            *v = ((top * (1.0 - fy) + bot * fy) * (1.0 + brightness)).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

/// Index pair kept unperturbed: `K/2 - 1` and `K/2`.
pub fn middle_replicas(k: usize) -> (usize, usize) {
    (k / 2 - 1, k / 2)
}

fn to_crop_size(img: &RgbImage) -> Result<RgbImage> {
    if img.dimensions() == (CROP_SIZE, CROP_SIZE) {
        return Ok(img.clone());
    }
    let b = BoundingBox::new(0.0, 0.0, img.width() as f64, img.height() as f64)?;
    crop_and_resize(img, &b)
}

/// K copies of the head crop; the two middle copies are exact, the others
/// get independent jitter drawn from `aug`.
pub fn replicate_to_sequence(
    head: &LabeledHeadImage,
    k: usize,
    aug: &AugmentationSpec,
    seed: u64,
) -> Result<Vec<RgbImage>> {
    if k < 2 {
        return Err(Error::InvalidValue(format!("K = {k}, need at least 2")));
    }
    aug.validate()?;
    let base = to_crop_size(&head.image)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m0, m1) = middle_replicas(k);
    Ok((0..k)
        .map(|i| {
            let dx = symmetric(&mut rng, aug.max_shift);
            let dy = symmetric(&mut rng, aug.max_shift);
            let zoom = 1.0 + symmetric(&mut rng, aug.max_zoom);
            let b = symmetric(&mut rng, aug.max_brightness_delta);
            if i == m0 || i == m1 {
                base.clone()
            } else {
                perturb(&base, dx, dy, zoom, b)
            }
        })
        .collect())
}

/// Thresholds of the mutual-gaze compatibility test, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompatibilityConfig {
    pub delta: f64,
    pub max_pitch_diff: f64,
}

impl Default for CompatibilityConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            max_pitch_diff: 0.25,
        }
    }
}

/// Left head looks right, right head looks left, similar pitch.
pub fn is_laeo_compatible(left: &PoseAngles, right: &PoseAngles, c: &CompatibilityConfig) -> bool {
    let (l, r) = (left.normalized(), right.normalized());
    l.yaw > c.delta && r.yaw < -c.delta && (l.pitch - r.pitch).abs() < c.max_pitch_diff
}

/// A scene: frame extent, the two target boxes (`first` left of `second`)
/// and bystander boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub frame: FrameGeometry,
    pub first: BoundingBox,
    pub second: BoundingBox,
    pub others: Vec<BoundingBox>,
}

impl Placement {
    pub fn mirrored(&self) -> Self {
        let axis = 2.0 * self.frame.origin_x + self.frame.width;
        let m = |b: &BoundingBox| {
            BoundingBox::new(axis - b.x2(), b.y1(), axis - b.x1(), b.y2())
                .expect("mirroring keeps extents")
        };
        Self {
            frame: self.frame,
            first: m(&self.second),
            second: m(&self.first),
            others: self.others.iter().map(m).collect(),
        }
    }
}

pub trait PlacementSampler {
    fn sample(&self, rng: &mut dyn RngCore) -> Placement;
}

/// Two heads of random size at random positions in a fixed frame, plus up
/// to `max_others` bystanders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomPlacement {
    pub frame_width: f64,
    pub frame_height: f64,
    pub min_head: f64,
    pub max_head: f64,
    pub max_others: usize,
}

impl Default for RandomPlacement {
    fn default() -> Self {
        Self {
            frame_width: 640.0,
            frame_height: 360.0,
            min_head: 40.0,
            max_head: 100.0,
            max_others: 2,
        }
    }
}

impl RandomPlacement {
    fn random_box(&self, rng: &mut dyn RngCore) -> BoundingBox {
        let s = rng.gen_range(self.min_head..=self.max_head);
        let x = rng.gen_range(0.0..=(self.frame_width - s));
        let y = rng.gen_range(0.0..=(self.frame_height - s));
        BoundingBox::from_xywh(x, y, s, s).expect("positive size")
    }
}

impl PlacementSampler for RandomPlacement {
    fn sample(&self, rng: &mut dyn RngCore) -> Placement {
        let frame = FrameGeometry::new(self.frame_width, self.frame_height).expect("positive frame");
        let (first, second) = loop {
            let a = self.random_box(rng);
            let b = self.random_box(rng);
            if a.center().0 != b.center().0 {
                break if a.center().0 < b.center().0 { (a, b) } else { (b, a) };
            }
        };
        let n = rng.gen_range(0..=self.max_others);
        let others = (0..n).map(|_| self.random_box(rng)).collect();
        Placement {
            frame,
            first,
            second,
            others,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    MirrorOne,
    SameDirection,
    InconsistentGeometry,
}

impl NegativeMode {
    pub const ALL: [NegativeMode; 3] = [Self::MirrorOne, Self::SameDirection, Self::InconsistentGeometry];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub k: usize,
    pub augmentation: AugmentationSpec,
    pub compatibility: CompatibilityConfig,
    pub head_map: HeadMapSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            augmentation: AugmentationSpec::default(),
            compatibility: CompatibilityConfig::default(),
            head_map: HeadMapSpec::default(),
        }
    }
}

/// A generated sample together with the poses of its left and right head.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub sample: TrackPairSample,
    pub left_pose: PoseAngles,
    pub right_pose: PoseAngles,
    pub negative_mode: Option<NegativeMode>,
}

struct Head {
    crops: Vec<RgbImage>,
    pose: PoseAngles,
}

/// Crop sequences for `a` and `b`, each from its own seed.
fn head_sequences(a: &LabeledHeadImage, b: &LabeledHeadImage, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(Head, Head)> {
    let (sa, sb): (u64, u64) = (rng.gen(), rng.gen());
    Ok((
        Head {
            crops: replicate_to_sequence(a, cfg.k, &cfg.augmentation, sa)?,
            pose: a.pose,
        },
        Head {
            crops: replicate_to_sequence(b, cfg.k, &cfg.augmentation, sb)?,
            pose: b.pose,
        },
    ))
}

fn assemble(left: Head, right: Head, p: &Placement, label: PairLabel, cfg: &SynthConfig) -> Result<SyntheticSample> {
    let mut heads = vec![p.first, p.second];
    heads.extend_from_slice(&p.others);
    let sample = TrackPairSample {
        left_crops: left.crops,
        right_crops: right.crops,
        head_map: render_head_map(&heads, 0, 1, &p.frame, &cfg.head_map)?,
        geometry: geometry_tuple(&p.first, &p.second, &p.frame),
        label,
        left_box: p.first,
        right_box: p.second,
    };
    sample.validate()?;
    Ok(SyntheticSample {
        sample,
        left_pose: left.pose,
        right_pose: right.pose,
        negative_mode: None,
    })
}

/// Whole-scene mirror: crops flip, sides swap, boxes reflect.
fn mirror_scene(left: Head, right: Head, p: &Placement) -> (Head, Head, Placement) {
    let flip = |h: Head| Head {
        crops: flip_sequence(&h.crops),
        pose: h.pose.normalized().mirrored().to_radians(),
    };
    (flip(right), flip(left), p.mirrored())
}

/// Positive pair with `a` at `box_a` and `b` at `box_b`. Rejected unless the
/// head placed on the left looks right at the one placed on the right.
#[allow(clippy::too_many_arguments)]
pub fn make_positive_pair_at(
    a: &LabeledHeadImage,
    b: &LabeledHeadImage,
    box_a: BoundingBox,
    box_b: BoundingBox,
    frame: FrameGeometry,
    others: Vec<BoundingBox>,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SyntheticSample> {
    let a_left = crate::types::is_left_of(&box_a, &box_b);
    let placement = if a_left {
        Placement { frame, first: box_a, second: box_b, others }
    } else {
        Placement { frame, first: box_b, second: box_a, others }
    };
    let (l, r) = if a_left { (a, b) } else { (b, a) };
    if !is_laeo_compatible(&l.pose, &r.pose, &cfg.compatibility) {
        return Err(Error::Rejected("poses and placement are not mutually facing".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ha, hb) = head_sequences(a, b, cfg, &mut rng)?;
    let (hl, hr) = if a_left { (ha, hb) } else { (hb, ha) };
    assemble(hl, hr, &placement, PairLabel::Laeo, cfg)
}

/// Positive pair: the head looking right goes to the sampled left box.
pub fn make_positive_pair(
    a: &LabeledHeadImage,
    b: &LabeledHeadImage,
    sampler: &dyn PlacementSampler,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SyntheticSample> {
    positive_with_rng(a, b, sampler, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Orders `(a, b)` so the head with the larger yaw comes first.
fn right_looking_first<'a>(a: &'a LabeledHeadImage, b: &'a LabeledHeadImage) -> (bool, &'a LabeledHeadImage, &'a LabeledHeadImage) {
    if a.pose.yaw >= b.pose.yaw {
        (true, a, b)
    } else {
        (false, b, a)
    }
}

fn positive_with_rng(
    a: &LabeledHeadImage,
    b: &LabeledHeadImage,
    sampler: &dyn PlacementSampler,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSample> {
    let (a_first, l, r) = right_looking_first(a, b);
    if !is_laeo_compatible(&l.pose, &r.pose, &cfg.compatibility) {
        return Err(Error::Rejected("poses are not compatible with mutual gaze".into()));
    }
    let placement = sampler.sample(rng);
    let (ha, hb) = head_sequences(a, b, cfg, rng)?;
    let (hl, hr) = if a_first { (ha, hb) } else { (hb, ha) };
    let mirror = cfg.augmentation.mirror && rng.gen_bool(0.5);
    if mirror {
        let (hl, hr, p) = mirror_scene(hl, hr, &placement);
        assemble(hl, hr, &p, PairLabel::Laeo, cfg)
    } else {
        assemble(hl, hr, &placement, PairLabel::Laeo, cfg)
    }
}

/// Negative pair.
///
/// * `MirrorOne`: the positive pair for the same seed with one side's
///   crops flipped; requires compatible poses.
/// * `SameDirection`: `b` is mirrored if needed so both yaws share a sign.
/// * `InconsistentGeometry`: the head looking right is placed on the right;
///   for compatible poses this is the positive pair with the two heads
///   exchanging boxes.
pub fn make_negative_pair(
    a: &LabeledHeadImage,
    b: &LabeledHeadImage,
    mode: NegativeMode,
    sampler: &dyn PlacementSampler,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = match mode {
        NegativeMode::MirrorOne => {
            let pos = positive_with_rng(a, b, sampler, cfg, &mut rng)?;
            let mut s = pos.sample;
            let (mut lp, mut rp) = (pos.left_pose, pos.right_pose);
            if rng.gen_bool(0.5) {
                s.left_crops = flip_sequence(&s.left_crops);
                lp = lp.normalized().mirrored().to_radians();
            } else {
                s.right_crops = flip_sequence(&s.right_crops);
                rp = rp.normalized().mirrored().to_radians();
            }
            s.label = PairLabel::NotLaeo;
            SyntheticSample {
                sample: s,
                left_pose: lp,
                right_pose: rp,
                negative_mode: None,
            }
        }
        NegativeMode::SameDirection => {
            let ya = a.pose.yaw;
            let yb = b.pose.yaw;
            let flipped;
            let b = if ya * yb < 0.0 {
                flipped = b.mirrored();
                &flipped
            } else {
                b
            };
            let placement = sampler.sample(&mut rng);
            let (ha, hb) = head_sequences(a, b, cfg, &mut rng)?;
            let (hl, hr) = if rng.gen_bool(0.5) { (ha, hb) } else { (hb, ha) };
            assemble(hl, hr, &placement, PairLabel::NotLaeo, cfg)?
        }
        NegativeMode::InconsistentGeometry => {
            let (a_first, _, _) = right_looking_first(a, b);
            let placement = sampler.sample(&mut rng);
            let (ha, hb) = head_sequences(a, b, cfg, &mut rng)?;
            // right-looking head on the right
            let (hl, hr) = if a_first { (hb, ha) } else { (ha, hb) };
            let mirror = cfg.augmentation.mirror && rng.gen_bool(0.5);
            if mirror {
                let (hl, hr, p) = mirror_scene(hl, hr, &placement);
                assemble(hl, hr, &p, PairLabel::NotLaeo, cfg)?
            } else {
                assemble(hl, hr, &placement, PairLabel::NotLaeo, cfg)?
            }
        }
    };
    debug_assert!(
        mode == NegativeMode::MirrorOne || !is_laeo_compatible(&out.left_pose, &out.right_pose, &cfg.compatibility)
    );
    out.negative_mode = Some(mode);
    Ok(out)
}

/// Draws random positive and negative samples from a pool of heads.
pub struct SyntheticGenerator<'a> {
    heads: &'a [LabeledHeadImage],
    sampler: &'a dyn PlacementSampler,
    config: SynthConfig,
    right_facing: Vec<usize>,
    left_facing: Vec<usize>,
}

/// Attempts before a positive draw gives up.
const MAX_ATTEMPTS: usize = 1000;

impl<'a> SyntheticGenerator<'a> {
    pub fn new(heads: &'a [LabeledHeadImage], sampler: &'a dyn PlacementSampler, config: SynthConfig) -> Result<Self> {
        if heads.len() < 2 {
            return Err(Error::Empty("synthetic generation needs at least two heads".into()));
        }
        let d = config.compatibility.delta;
        let right_facing = (0..heads.len()).filter(|&i| heads[i].pose.normalized().yaw > d).collect();
        let left_facing = (0..heads.len()).filter(|&i| heads[i].pose.normalized().yaw < -d).collect();
        Ok(Self {
            heads,
            sampler,
            config,
            right_facing,
            left_facing,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Picks a compatible pair, mirroring heads when one facing direction
    /// is missing from the pool.
    fn compatible_pair(&self, rng: &mut ChaCha8Rng) -> Result<(LabeledHeadImage, LabeledHeadImage)> {
        let c = &self.config.compatibility;
        let facing = |rng: &mut ChaCha8Rng, right: bool| -> Option<LabeledHeadImage> {
            let (own, other) = if right {
                (&self.right_facing, &self.left_facing)
            } else {
                (&self.left_facing, &self.right_facing)
            };
            let use_own = !own.is_empty() && (other.is_empty() || rng.gen_bool(0.5));
            if use_own {
                Some(self.heads[own[rng.gen_range(0..own.len())]].clone())
            } else if !other.is_empty() {
                Some(self.heads[other[rng.gen_range(0..other.len())]].mirrored())
            } else {
                None
            }
        };
        for _ in 0..MAX_ATTEMPTS {
            let (Some(l), Some(r)) = (facing(rng, true), facing(rng, false)) else {
                break;
            };
            if is_laeo_compatible(&l.pose, &r.pose, c) {
                return Ok((l, r));
            }
        }
        Err(Error::Rejected("no compatible head pair found in the pool".into()))
    }

    pub fn positive(&self, rng: &mut ChaCha8Rng) -> Result<SyntheticSample> {
        let (l, r) = self.compatible_pair(rng)?;
        make_positive_pair(&l, &r, self.sampler, &self.config, rng.gen())
    }

    pub fn negative(&self, rng: &mut ChaCha8Rng) -> Result<SyntheticSample> {
        let mode = NegativeMode::ALL[rng.gen_range(0..3)];
        self.negative_of(mode, rng)
    }

    pub fn negative_of(&self, mode: NegativeMode, rng: &mut ChaCha8Rng) -> Result<SyntheticSample> {
        let (a, b) = match mode {
            NegativeMode::MirrorOne | NegativeMode::InconsistentGeometry => self.compatible_pair(rng)?,
            NegativeMode::SameDirection => {
                let i = rng.gen_range(0..self.heads.len());
                let mut j = rng.gen_range(0..self.heads.len() - 1);
                if j >= i {
                    j += 1;
                }
                (self.heads[i].clone(), self.heads[j].clone())
            }
        };
        make_negative_pair(&a, &b, mode, self.sampler, &self.config, rng.gen())
    }
}

/// Appearance of a procedurally drawn head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadStyle {
    pub background: [u8; 3],
    pub skin: [u8; 3],
    pub hair: [u8; 3],
    /// Head radius as a fraction of the crop side.
    pub radius: f64,
}

impl HeadStyle {
    pub fn random(rng: &mut impl Rng) -> Self {
        const SKIN: [[u8; 3]; 5] = [[241, 194, 160], [224, 172, 125], [198, 134, 94], [141, 85, 54], [94, 58, 38]];
        const HAIR: [[u8; 3]; 4] = [[30, 22, 18], [85, 55, 30], [170, 130, 70], [120, 120, 120]];
        let bg = [rng.gen_range(40..200), rng.gen_range(40..200), rng.gen_range(40..200)];
        Self {
            background: bg,
            skin: SKIN[rng.gen_range(0..SKIN.len())],
            hair: HAIR[rng.gen_range(0..HAIR.len())],
            radius: rng.gen_range(0.34..0.42),
        }
    }
}

/// Rotation taking head coordinates (x right, y down, z out of the face)
/// to camera coordinates (z toward the viewer): roll, then yaw, then pitch.
fn head_rotation(p: &PoseAngles) -> [[f64; 3]; 3] {
    let (sy, cy) = p.yaw.sin_cos();
    let (sp, cp) = p.pitch.sin_cos();
    let (sr, cr) = p.roll.sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    // positive pitch tilts the face up (toward -y)
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    matmul(&rz, &matmul(&ry, &rx))
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn mat_t_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|j| (0..3).map(|i| m[i][j] * v[i]).sum())
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Draws a shaded spherical head facing along `pose`: skin face region,
/// hair on the back and crown, two eyes and a nose marker.
pub fn render_procedural_head(pose: &PoseAngles, style: &HeadStyle) -> RgbImage {
    let size = CROP_SIZE as f64;
    let r = style.radius * size;
    let c = (size - 1.0) / 2.0;
    let rot = head_rotation(pose);
    let eyes = [[-0.35, -0.2, 0.915], [0.35, -0.2, 0.915]];
    let nose = [0.0, 0.12, 0.99];
    let shade = |col: [u8; 3], k: f64| col.map(|v| (v as f64 * k).round().clamp(0.0, 255.0) as u8);
    RgbImage::from_fn(CROP_SIZE, CROP_SIZE, |x, y| {
        let u = (x as f64 - c) / r;
        let v = (y as f64 - c) / r;
        let d = u * u + v * v;
        if d >= 1.0 {
            return Rgb(style.background);
        }
        let z = (1.0 - d).sqrt();
        let q = mat_t_vec(&rot, [u, v, z]);
        let light = 0.55 + 0.45 * z;
        let col = if eyes.iter().any(|e| dist2(q, *e) < 0.02) {
            [20, 20, 25]
        } else if dist2(q, nose) < 0.03 {
            [200, 40, 40]
        } else if q[2] < -0.05 || q[1] < -0.55 {
            style.hair
        } else {
            style.skin
        };
        Rgb(shade(col, light))
    })
}

/// `n` procedurally rendered heads with yaw in `[-0.6, 0.6]`, pitch in
/// `[-0.2, 0.2]` and roll in `[-0.1, 0.1]` (normalized units).
pub fn procedural_corpus(n: usize, seed: u64) -> Vec<LabeledHeadImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let yaw = rng.gen_range(-0.6..=0.6) * PI;
            let pitch = rng.gen_range(-0.2..=0.2) * PI;
            let roll = rng.gen_range(-0.1..=0.1) * PI;
            let pose = PoseAngles::new(yaw, pitch, roll).expect("in range");
            let style = HeadStyle::random(&mut rng);
            LabeledHeadImage {
                image: render_procedural_head(&pose, &style),
                pose,
                source_id: format!("procedural-{seed}-{i}"),
            }
        })
        .collect()
}

/// One line of a pose list: `path x1 y1 x2 y2 yaw pitch roll`, angles in
/// radians, box in pixels of the referenced image.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseListEntry {
    pub path: String,
    pub bbox: BoundingBox,
    pub pose: PoseAngles,
}

/// Parses a pose list; blank lines and lines starting with `#` are skipped.
pub fn parse_pose_list(reader: impl BufRead) -> Result<Vec<PoseListEntry>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        if f.len() != 8 {
            return Err(Error::InvalidValue(format!("line {}: expected 8 fields, got {}", n + 1, f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|e| Error::InvalidValue(format!("line {}: field {}: {e}", n + 1, i + 1)))
        };
        out.push(PoseListEntry {
            path: f[0].to_string(),
            bbox: BoundingBox::new(num(1)?, num(2)?, num(3)?, num(4)?)?,
            pose: PoseAngles::new(num(5)?, num(6)?, num(7)?)?,
        });
    }
    Ok(out)
}

/// Loads the head crops of a pose list; relative paths resolve against `root`.
pub fn load_pose_list(list: &Path, root: &Path) -> Result<Vec<LabeledHeadImage>> {
    let f = std::fs::File::open(list)?;
    parse_pose_list(std::io::BufReader::new(f))?
        .into_iter()
        .map(|e| {
            let img = image::open(root.join(&e.path))
                .map_err(|err| Error::InvalidValue(format!("{}: {err}", e.path)))?
                .to_rgb8();
            Ok(LabeledHeadImage {
                image: crop_and_resize(&img, &e.bbox)?,
                pose: e.pose,
                source_id: e.path,
            })
        })
        .collect()
}
