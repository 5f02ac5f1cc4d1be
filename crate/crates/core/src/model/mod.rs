//! LAEO-Net: a shared 3D-conv head-pose branch applied to both heads, a
//! 2D-conv head-map branch (or a small geometry MLP), and a fusion block
//! producing `(p_not_laeo, p_laeo)`.

mod branch;
mod pose;

pub use branch::Mode;
pub use pose::{PoseNet, PoseNetConfig, PoseTrace};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crop::normalize_sequence;
use crate::error::{Error, Result};
use crate::headmap::{HeadMap, MAP_SIZE};
use crate::nn::{
    relu_backward_inplace, relu_inplace, softmax, Conv, ConvSpec, Dense, DenseCache, FrozenMask, Grads, Padding,
    ParamGroup, ParamStore,
};
use crate::types::{GeometryTuple, TrackPairSample, CROP_SIZE, DEFAULT_K};
pub(crate) const CROP: usize = CROP_SIZE as usize;

use branch::{apply_dropout, embed, embed_backward, ConvStack, EmbedTrace, StackTrace};

/// One conv stage. Kernel and stride are given as `[h, w, t]`; 2D stages
/// use `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerConfig {
    pub filters: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: Padding,
}

impl ConvLayerConfig {
    pub const fn new(filters: usize, kernel: [usize; 3], stride: [usize; 3], padding: Padding) -> Self {
        Self {
            filters,
            kernel,
            stride,
            padding,
        }
    }

    fn spec(&self, in_channels: usize) -> ConvSpec {
        let [kh, kw, kt] = self.kernel;
        let [sh, sw, st] = self.stride;
        ConvSpec {
            in_channels,
            out_channels: self.filters,
            kernel: [kt, kh, kw],
            stride: [st, sh, sw],
            padding: self.padding,
        }
    }
}

pub fn default_head_pose_layers() -> Vec<ConvLayerConfig> {
    use Padding::{Same, Valid};
    vec![
        ConvLayerConfig::new(16, [5, 5, 3], [2, 2, 1], Same),
        ConvLayerConfig::new(24, [3, 3, 3], [2, 2, 1], Same),
        ConvLayerConfig::new(32, [3, 3, 3], [2, 2, 1], Same),
        ConvLayerConfig::new(12, [6, 6, 1], [1, 1, 1], Valid),
    ]
}

pub fn default_head_map_layers() -> Vec<ConvLayerConfig> {
    use Padding::Same;
    vec![
        ConvLayerConfig::new(8, [5, 5, 1], [2, 2, 1], Same),
        ConvLayerConfig::new(16, [3, 3, 1], [2, 2, 1], Same),
        ConvLayerConfig::new(24, [3, 3, 1], [2, 2, 1], Same),
        ConvLayerConfig::new(16, [3, 3, 1], [4, 4, 1], Same),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaeoNetConfig {
    pub k: usize,
    pub head_pose_layers: Vec<ConvLayerConfig>,
    pub head_map_layers: Vec<ConvLayerConfig>,
    pub fusion_hidden_units: usize,
    pub dropout_rate: f64,
    pub use_geometry_branch: bool,
    pub geometry_hidden: [usize; 2],
    /// When false, left and right heads get independent head-pose weights.
    pub share_head_pose_weights: bool,
}

impl Default for LaeoNetConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            head_pose_layers: default_head_pose_layers(),
            head_map_layers: default_head_map_layers(),
            fusion_hidden_units: 128,
            dropout_rate: 0.5,
            use_geometry_branch: false,
            geometry_hidden: [64, 16],
            share_head_pose_weights: true,
        }
    }
}

impl LaeoNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidValue("k must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidValue(format!("dropout_rate {} not in [0,1)", self.dropout_rate)));
        }
        if self.head_pose_layers.is_empty() || self.head_map_layers.is_empty() {
            return Err(Error::InvalidValue("conv stacks must have at least one layer".into()));
        }
        if self.fusion_hidden_units == 0 || self.geometry_hidden.contains(&0) {
            return Err(Error::InvalidValue("hidden sizes must be >= 1".into()));
        }
        for l in self.head_map_layers.iter() {
            if l.kernel[2] != 1 || l.stride[2] != 1 {
                return Err(Error::InvalidValue("head-map layers are 2D (t = 1)".into()));
            }
        }
        for l in self.head_pose_layers.iter().chain(&self.head_map_layers) {
            if l.filters == 0 || l.kernel.contains(&0) || l.stride.contains(&0) {
                return Err(Error::InvalidValue(format!("degenerate conv layer {l:?}")));
            }
        }
        // Surfaces impossible valid-padding shapes up front.
        self.head_pose_stack_shape()?;
        stack_output_shape([1, MAP_SIZE, MAP_SIZE], 3, &self.head_map_layers)?;
        Ok(())
    }

    fn head_pose_stack_shape(&self) -> Result<usize> {
        stack_output_shape([self.k, CROP, CROP], 3, &self.head_pose_layers)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

pub(crate) fn digest_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("config serializes");
    let d = Sha256::digest(&bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn stack_output_shape(mut shape: [usize; 3], mut channels: usize, layers: &[ConvLayerConfig]) -> Result<usize> {
    for l in layers {
        shape = l.spec(channels).output_geometry(shape)?.0;
        channels = l.filters;
    }
    Ok(shape.iter().product::<usize>() * channels)
}

pub(crate) fn build_stack(
    store: &mut ParamStore,
    prefix: &str,
    group: ParamGroup,
    layers: &[ConvLayerConfig],
    in_shape: [usize; 3],
    rng: &mut ChaCha8Rng,
) -> ConvStack {
    let mut channels = 3;
    let mut convs = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        convs.push(Conv::new(store, &format!("{prefix}.conv{}", i + 1), group, l.spec(channels), rng));
        channels = l.filters;
    }
    ConvStack {
        layers: convs,
        in_shape,
    }
}

/// Which side of the pair a head-pose input belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Head-pose input: normalized crops, or precomputed rectified branch
/// features (valid only while the head-pose group is frozen).
#[derive(Debug, Clone, Copy)]
pub enum HeadInput<'a> {
    Crops(&'a [f64]),
    Features(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub enum ContextInput<'a> {
    Map(&'a HeadMap),
    Geometry(GeometryTuple),
}

#[derive(Debug, Clone, Copy)]
pub struct PairInput<'a> {
    pub left: HeadInput<'a>,
    pub right: HeadInput<'a>,
    pub context: ContextInput<'a>,
}

#[derive(Debug, Clone)]
struct HeadTrace {
    stack: Option<StackTrace>,
    embed: EmbedTrace,
}

#[derive(Debug, Clone)]
enum ContextTrace {
    Map { stack: StackTrace, embed: EmbedTrace },
    Geometry { c1: DenseCache, h1: Vec<f64>, c2: DenseCache, out: Vec<f64> },
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    left: HeadTrace,
    right: HeadTrace,
    context: ContextTrace,
    hidden_cache: DenseCache,
    hidden_relu: Vec<f64>,
    hidden_mask: Option<Vec<f64>>,
    out_cache: DenseCache,
}

#[derive(Debug, Clone)]
pub struct LaeoNet {
    config: LaeoNetConfig,
    store: ParamStore,
    frozen: FrozenMask,
    head_pose_left: ConvStack,
    head_pose_right: ConvStack,
    head_map: Option<ConvStack>,
    geometry: Option<[Dense; 2]>,
    fusion_hidden: Dense,
    fusion_out: Dense,
    hp_dim: usize,
    ctx_dim: usize,
}

pub const HEAD_POSE_PREFIX: &str = "head_pose";
const HEAD_POSE_RIGHT_PREFIX: &str = "head_pose_right";

impl LaeoNet {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(config: LaeoNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hp_shape = [config.k, CROP, CROP];
        let head_pose_left = build_stack(
            &mut store,
            HEAD_POSE_PREFIX,
            ParamGroup::HeadPose,
            &config.head_pose_layers,
            hp_shape,
            &mut rng,
        );
        let head_pose_right = if config.share_head_pose_weights {
            head_pose_left.clone()
        } else {
            build_stack(
                &mut store,
                HEAD_POSE_RIGHT_PREFIX,
                ParamGroup::HeadPose,
                &config.head_pose_layers,
                hp_shape,
                &mut rng,
            )
        };
        let hp_dim = head_pose_left.output_dim();
        let (head_map, geometry, ctx_dim) = if config.use_geometry_branch {
            let [h1, h2] = config.geometry_hidden;
            let g1 = Dense::new(&mut store, "geometry.fc1", ParamGroup::Geometry, 3, h1, &mut rng);
            let g2 = Dense::new(&mut store, "geometry.fc2", ParamGroup::Geometry, h1, h2, &mut rng);
            (None, Some([g1, g2]), h2)
        } else {
            let s = build_stack(
                &mut store,
                "head_map",
                ParamGroup::HeadMap,
                &config.head_map_layers,
                [1, MAP_SIZE, MAP_SIZE],
                &mut rng,
            );
            let d = s.output_dim();
            (Some(s), None, d)
        };
        let fusion_in = 2 * hp_dim + ctx_dim;
        let fusion_hidden = Dense::new(
            &mut store,
            "fusion.fc1",
            ParamGroup::Fusion,
            fusion_in,
            config.fusion_hidden_units,
            &mut rng,
        );
        let fusion_out = Dense::new(&mut store, "fusion.fc2", ParamGroup::Fusion, config.fusion_hidden_units, 2, &mut rng);
        Ok(Self {
            config,
            store,
            frozen: FrozenMask::new(),
            head_pose_left,
            head_pose_right,
            head_map,
            geometry,
            fusion_hidden,
            fusion_out,
            hp_dim,
            ctx_dim,
        })
    }

    pub fn config(&self) -> &LaeoNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn frozen(&self) -> &FrozenMask {
        &self.frozen
    }

    pub fn set_frozen(&mut self, group: ParamGroup, frozen: bool) {
        if frozen {
            self.frozen.insert(group);
        } else {
            self.frozen.remove(&group);
        }
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Length of `e_hp`.
    pub fn head_pose_dim(&self) -> usize {
        self.hp_dim
    }

    /// Length of the context embedding (`e_hm` or the geometry output).
    pub fn context_dim(&self) -> usize {
        self.ctx_dim
    }

    fn stack(&self, side: Side) -> &ConvStack {
        match side {
            Side::Left => &self.head_pose_left,
            Side::Right => &self.head_pose_right,
        }
    }

    fn check_crops(&self, crops: &[f64]) -> Result<()> {
        let n = self.head_pose_left.input_len();
        if crops.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{CROP_SIZE}x{CROP_SIZE}x3 = {n} values", self.config.k),
                got: crops.len().to_string(),
            });
        }
        Ok(())
    }

    /// Rectified head-pose branch output before dropout and normalization.
    pub fn head_pose_features(&self, side: Side, crops: &[f64]) -> Result<Vec<f64>> {
        self.check_crops(crops)?;
        self.stack(side).forward(&self.store, crops)
    }

    /// Unit-norm `e_hp` for normalized crops (`K*64*64*3`, channel-last,
    /// values in `[-1, 1]`), inference mode.
    pub fn embed_head_sequence(&self, crops: &[f64]) -> Result<Vec<f64>> {
        self.embed_head_sequence_side(Side::Left, crops)
    }

    pub fn embed_head_sequence_side(&self, side: Side, crops: &[f64]) -> Result<Vec<f64>> {
        let f = self.head_pose_features(side, crops)?;
        Ok(embed(&f, None).0)
    }

    /// Unit-norm `e_hm`, inference mode. Errors when the geometry branch
    /// replaces the head map.
    pub fn embed_head_map(&self, map: &HeadMap) -> Result<Vec<f64>> {
        let s = self
            .head_map
            .as_ref()
            .ok_or_else(|| Error::InvalidValue("network uses the geometry branch".into()))?;
        let f = s.forward(&self.store, map.as_slice())?;
        Ok(embed(&f, None).0)
    }

    pub fn embed_geometry(&self, g: &GeometryTuple) -> Result<Vec<f64>> {
        let [d1, d2] = self
            .geometry
            .ok_or_else(|| Error::InvalidValue("network uses the head-map branch".into()))?;
        let mut h = d1.forward(&self.store, &g.to_array())?;
        relu_inplace(&mut h);
        let mut o = d2.forward(&self.store, &h)?;
        relu_inplace(&mut o);
        Ok(o)
    }

    /// Softmax over the two fusion logits, inference mode.
    pub fn fuse_and_classify(&self, e_left: &[f64], e_right: &[f64], e_context: &[f64]) -> Result<[f64; 2]> {
        let x = self.concat(e_left, e_right, e_context)?;
        let mut h = self.fusion_hidden.forward(&self.store, &x)?;
        relu_inplace(&mut h);
        let z = self.fusion_out.forward(&self.store, &h)?;
        let p = softmax(&z);
        Ok([p[0], p[1]])
    }

    fn concat(&self, l: &[f64], r: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        if l.len() != self.hp_dim || r.len() != self.hp_dim || c.len() != self.ctx_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("({}, {}, {})", self.hp_dim, self.hp_dim, self.ctx_dim),
                got: format!("({}, {}, {})", l.len(), r.len(), c.len()),
            });
        }
        let mut x = Vec::with_capacity(l.len() + r.len() + c.len());
        x.extend_from_slice(l);
        x.extend_from_slice(r);
        x.extend_from_slice(c);
        Ok(x)
    }

    /// Builds the network input for a sample, normalizing its crops.
    pub fn sample_tensors(&self, sample: &TrackPairSample) -> Result<(Vec<f64>, Vec<f64>)> {
        sample.validate()?;
        if sample.k() != self.config.k {
            return Err(Error::ShapeMismatch {
                expected: format!("K = {}", self.config.k),
                got: format!("K = {}", sample.k()),
            });
        }
        Ok((normalize_sequence(&sample.left_crops)?, normalize_sequence(&sample.right_crops)?))
    }

    pub fn context_for<'a>(&self, sample: &'a TrackPairSample) -> ContextInput<'a> {
        if self.config.use_geometry_branch {
            ContextInput::Geometry(sample.geometry)
        } else {
            ContextInput::Map(&sample.head_map)
        }
    }

    /// `p_LAEO` with dropout disabled.
    pub fn score_track_pair(&self, sample: &TrackPairSample) -> Result<f64> {
        let (l, r) = self.sample_tensors(sample)?;
        let input = PairInput {
            left: HeadInput::Crops(&l),
            right: HeadInput::Crops(&r),
            context: self.context_for(sample),
        };
        Ok(self.forward(&input, &mut Mode::Inference)?.0[1])
    }

    /// Full forward pass. The trace supports [`LaeoNet::backward`].
    pub fn forward(&self, input: &PairInput, mode: &mut Mode) -> Result<([f64; 2], ForwardTrace)> {
        let rate = self.config.dropout_rate;
        let hp_trainable = !self.frozen.contains(&ParamGroup::HeadPose);
        let (e_left, left) = self.head_forward(Side::Left, input.left, mode, hp_trainable)?;
        let (e_right, right) = self.head_forward(Side::Right, input.right, mode, hp_trainable)?;
        let (e_ctx, context) = self.context_forward(input.context, mode)?;
        let x = self.concat(&e_left, &e_right, &e_ctx)?;
        let (mut h, hidden_cache) = self.fusion_hidden.forward_cached(&self.store, x)?;
        relu_inplace(&mut h);
        let hidden_relu = h.clone();
        let hidden_mask = apply_dropout(&mut h, mode.dropout(rate));
        let (z, out_cache) = self.fusion_out.forward_cached(&self.store, h)?;
        let p = softmax(&z);
        Ok((
            [p[0], p[1]],
            ForwardTrace {
                left,
                right,
                context,
                hidden_cache,
                hidden_relu,
                hidden_mask,
                out_cache,
            },
        ))
    }

    fn head_forward(
        &self,
        side: Side,
        input: HeadInput,
        mode: &mut Mode,
        trainable: bool,
    ) -> Result<(Vec<f64>, HeadTrace)> {
        let (features, stack) = match input {
            HeadInput::Crops(c) => {
                self.check_crops(c)?;
                if trainable && mode.is_training() {
                    let (f, t) = self.stack(side).forward_traced(&self.store, c.to_vec())?;
                    (f, Some(t))
                } else {
                    (self.stack(side).forward(&self.store, c)?, None)
                }
            }
            HeadInput::Features(f) => {
                if trainable && mode.is_training() {
                    return Err(Error::InvalidValue(
                        "cached head-pose features require a frozen head-pose group".into(),
                    ));
                }
                if f.len() != self.hp_dim {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{} features", self.hp_dim),
                        got: f.len().to_string(),
                    });
                }
                (f.to_vec(), None)
            }
        };
        let (e, embed_trace) = embed(&features, mode.dropout(self.config.dropout_rate));
        Ok((
            e,
            HeadTrace {
                stack,
                embed: embed_trace,
            },
        ))
    }

    fn context_forward(&self, input: ContextInput, mode: &mut Mode) -> Result<(Vec<f64>, ContextTrace)> {
        match (input, &self.head_map, &self.geometry) {
            (ContextInput::Map(m), Some(s), _) => {
                let (f, stack) = s.forward_traced(&self.store, m.as_slice().to_vec())?;
                let (e, embed_trace) = embed(&f, mode.dropout(self.config.dropout_rate));
                Ok((
                    e,
                    ContextTrace::Map {
                        stack,
                        embed: embed_trace,
                    },
                ))
            }
            (ContextInput::Geometry(g), _, Some([d1, d2])) => {
                let (mut h1, c1) = d1.forward_cached(&self.store, g.to_array().to_vec())?;
                relu_inplace(&mut h1);
                let (mut out, c2) = d2.forward_cached(&self.store, h1.clone())?;
                relu_inplace(&mut out);
                Ok((out.clone(), ContextTrace::Geometry { c1, h1, c2, out }))
            }
            (ContextInput::Map(_), None, _) => Err(Error::InvalidValue("network expects a geometry tuple".into())),
            (ContextInput::Geometry(_), _, None) => Err(Error::InvalidValue("network expects a head map".into())),
        }
    }

    /// Accumulates parameter gradients given `dL/dlogits`. Frozen groups
    /// receive no gradient.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: [f64; 2], grads: &mut Grads) {
        let frozen = |g| self.frozen.contains(&g);
        let fusion_frozen = frozen(ParamGroup::Fusion);
        let mut scratch = if fusion_frozen { Some(self.store.zero_grads()) } else { None };
        let fg = scratch.as_mut().unwrap_or(grads);
        let mut dh = self
            .fusion_out
            .backward(&self.store, &trace.out_cache, &dlogits, fg, true)
            .expect("input grad requested");
        if let Some(m) = &trace.hidden_mask {
            for (g, k) in dh.iter_mut().zip(m) {
                *g *= k;
            }
        }
        relu_backward_inplace(&mut dh, &trace.hidden_relu);
        let dx = self
            .fusion_hidden
            .backward(&self.store, &trace.hidden_cache, &dh, fg, true)
            .expect("input grad requested");
        drop(scratch);

        let (dl, rest) = dx.split_at(self.hp_dim);
        let (dr, dc) = rest.split_at(self.hp_dim);
        if !frozen(ParamGroup::HeadPose) {
            for (side, t, d) in [(Side::Left, &trace.left, dl), (Side::Right, &trace.right, dr)] {
                if let Some(st) = &t.stack {
                    let df = embed_backward(&t.embed, d);
                    self.stack(side).backward(&self.store, st, df, grads);
                }
            }
        }
        match &trace.context {
            ContextTrace::Map { stack, embed: et } => {
                if !frozen(ParamGroup::HeadMap) {
                    let df = embed_backward(et, dc);
                    self.head_map.as_ref().expect("map branch").backward(&self.store, stack, df, grads);
                }
            }
            ContextTrace::Geometry { c1, h1, c2, out } => {
                if !frozen(ParamGroup::Geometry) {
                    let [d1, d2] = self.geometry.expect("geometry branch");
                    let mut g = dc.to_vec();
                    relu_backward_inplace(&mut g, out);
                    let mut g = d2.backward(&self.store, c2, &g, grads, true).expect("input grad requested");
                    relu_backward_inplace(&mut g, h1);
                    d1.backward(&self.store, c1, &g, grads, false);
                }
            }
        }
    }

    /// Copies the head-pose branch weights from a pretrained pose network
    /// into both sides.
    pub fn load_head_pose(&mut self, pose: &PoseNet) -> Result<()> {
        let src = pose.params();
        let prefixes: &[&str] = if self.config.share_head_pose_weights {
            &[HEAD_POSE_PREFIX]
        } else {
            &[HEAD_POSE_PREFIX, HEAD_POSE_RIGHT_PREFIX]
        };
        let mut copied = 0;
        for p in src.params().iter().filter(|p| p.group == ParamGroup::HeadPose) {
            let suffix = p.name.strip_prefix(HEAD_POSE_PREFIX).unwrap_or(&p.name);
            for prefix in prefixes {
                let name = format!("{prefix}{suffix}");
                let dst = self
                    .store
                    .find_mut(&name)
                    .ok_or_else(|| Error::ShapeMismatch { expected: name.clone(), got: "missing tensor".into() })?;
                if dst.shape != p.shape {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{name} {:?}", dst.shape),
                        got: format!("{:?}", p.shape),
                    });
                }
                dst.data.copy_from_slice(&p.data);
                copied += 1;
            }
        }
        if copied != prefixes.len() * 2 * self.config.head_pose_layers.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} head-pose layers", self.config.head_pose_layers.len()),
                got: format!("{copied} tensors copied"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::headmap::{render_head_map, HeadMapSpec};
    use crate::types::{BoundingBox, FrameGeometry, PairLabel};
    use image::{Rgb, RgbImage};
    use rand::Rng;

    // Hand-computed per-layer counts (weights + biases).
    const HEAD_POSE_PARAMS: usize = (5 * 5 * 3 * 3 * 16 + 16)
        + (3 * 3 * 3 * 16 * 24 + 24)
        + (3 * 3 * 3 * 24 * 32 + 32)
        + (6 * 6 * 32 * 12 + 12);
    const HEAD_MAP_PARAMS: usize =
        (5 * 5 * 3 * 8 + 8) + (3 * 3 * 8 * 16 + 16) + (3 * 3 * 16 * 24 + 24) + (3 * 3 * 24 * 16 + 16);
    const FUSION_PARAMS: usize = (2224 * 128 + 128) + (128 * 2 + 2);

    fn small_config() -> LaeoNetConfig {
        LaeoNetConfig {
            k: 2,
            head_pose_layers: vec![
                ConvLayerConfig::new(2, [5, 5, 2], [4, 4, 1], Padding::Same),
                ConvLayerConfig::new(3, [4, 4, 1], [4, 4, 1], Padding::Valid),
            ],
            head_map_layers: vec![
                ConvLayerConfig::new(2, [5, 5, 1], [4, 4, 1], Padding::Same),
                ConvLayerConfig::new(3, [3, 3, 1], [4, 4, 1], Padding::Same),
            ],
            fusion_hidden_units: 6,
            ..LaeoNetConfig::default()
        }
    }

    fn random_sample(rng: &mut ChaCha8Rng, k: usize) -> TrackPairSample {
        let crop = |rng: &mut ChaCha8Rng| {
            RgbImage::from_fn(64, 64, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
        };
        let frame = FrameGeometry::new(200.0, 100.0).unwrap();
        let a = BoundingBox::new(20.0, 20.0, 50.0, 50.0).unwrap();
        let b = BoundingBox::new(120.0, 25.0, 145.0, 50.0).unwrap();
        let heads = [a, b];
        TrackPairSample {
            left_crops: (0..k).map(|_| crop(rng)).collect(),
            right_crops: (0..k).map(|_| crop(rng)).collect(),
            head_map: render_head_map(&heads, 0, 1, &frame, &HeadMapSpec::default()).unwrap(),
            geometry: crate::headmap::geometry_tuple(&a, &b, &frame),
            label: PairLabel::Laeo,
            left_box: a,
            right_box: b,
        }
    }

    #[test]
    fn default_dims_and_param_count() {
        assert_eq!(HEAD_POSE_PARAMS, 48612);
        assert_eq!(HEAD_MAP_PARAMS, 8728);
        let net = LaeoNet::new(LaeoNetConfig::default(), 0).unwrap();
        assert_eq!(net.head_pose_dim(), 3 * 3 * 10 * 12);
        assert_eq!(net.context_dim(), 2 * 2 * 16);
        assert_eq!(net.params().num_scalars_in(ParamGroup::HeadPose), HEAD_POSE_PARAMS);
        assert_eq!(net.params().num_scalars_in(ParamGroup::HeadMap), HEAD_MAP_PARAMS);
        assert_eq!(net.params().num_scalars_in(ParamGroup::Fusion), FUSION_PARAMS);
        assert_eq!(net.num_params(), 342_398);
    }

    #[test]
    fn geometry_and_unshared_param_counts() {
        let cfg = LaeoNetConfig {
            use_geometry_branch: true,
            ..LaeoNetConfig::default()
        };
        let net = LaeoNet::new(cfg, 0).unwrap();
        assert_eq!(net.context_dim(), 16);
        assert_eq!(net.params().num_scalars_in(ParamGroup::Geometry), (3 * 64 + 64) + (64 * 16 + 16));
        assert_eq!(net.params().num_scalars_in(ParamGroup::HeadMap), 0);
        assert_eq!(net.params().num_scalars_in(ParamGroup::Fusion), (2176 * 128 + 128) + 258);

        let cfg = LaeoNetConfig {
            share_head_pose_weights: false,
            ..LaeoNetConfig::default()
        };
        let net = LaeoNet::new(cfg, 0).unwrap();
        assert_eq!(net.params().num_scalars_in(ParamGroup::HeadPose), 2 * HEAD_POSE_PARAMS);
    }

    #[test]
    fn config_validation() {
        let mut c = LaeoNetConfig::default();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = LaeoNetConfig::default();
        c.k = 0;
        assert!(c.validate().is_err());
        let mut c = LaeoNetConfig::default();
        c.head_pose_layers[3].kernel = [40, 40, 1];
        assert!(c.validate().is_err());
        assert_eq!(LaeoNetConfig::default().digest(), LaeoNetConfig::default().digest());
        assert_ne!(LaeoNetConfig::default().digest(), small_config().digest());
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let net = LaeoNet::new(small_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_sample(&mut rng, 2);
        let (l, _) = net.sample_tensors(&s).unwrap();
        let e1 = net.embed_head_sequence(&l).unwrap();
        let e2 = net.embed_head_sequence(&l).unwrap();
        assert_eq!(e1, e2);
        let n: f64 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6, "norm {n}");
        let m = net.embed_head_map(&s.head_map).unwrap();
        let n: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6 || n == 0.0);
        let z = net.embed_head_map(&HeadMap::zeros()).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
        assert!(net.embed_head_sequence(&l[1..]).is_err());
        assert!(net.embed_geometry(&s.geometry).is_err());
    }

    #[test]
    fn geometry_branch_zero_weights_give_zero() {
        let cfg = LaeoNetConfig {
            use_geometry_branch: true,
            ..small_config()
        };
        let mut net = LaeoNet::new(cfg, 0).unwrap();
        let g = GeometryTuple {
            dx: 0.3,
            dy: -0.1,
            scale_ratio: 1.2,
        };
        let out = net.embed_geometry(&g).unwrap();
        assert_eq!(out.len(), 16);
        assert_eq!(out, net.embed_geometry(&g).unwrap());
        for p in net.params_mut().params_mut() {
            if p.group == ParamGroup::Geometry {
                p.data.fill(0.0);
            }
        }
        assert!(net.embed_geometry(&g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_outputs_are_probabilities() {
        let net = LaeoNet::new(small_config(), 0).unwrap();
        let (d, c) = (net.head_pose_dim(), net.context_dim());
        let p = net.fuse_and_classify(&vec![0.1; d], &vec![-0.2; d], &vec![0.3; c]).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.0 && p[1] > 0.0);
        assert!(net.fuse_and_classify(&vec![0.1; d + 1], &vec![0.0; d], &vec![0.0; c]).is_err());
    }

    #[test]
    fn scoring_is_order_independent() {
        let net = LaeoNet::new(small_config(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_sample(&mut rng, 2);
        let b = random_sample(&mut rng, 2);
        let fwd = [net.score_track_pair(&a).unwrap(), net.score_track_pair(&b).unwrap()];
        let rev = [net.score_track_pair(&b).unwrap(), net.score_track_pair(&a).unwrap()];
        assert_eq!(fwd[0], rev[1]);
        assert_eq!(fwd[1], rev[0]);
        assert!((0.0..=1.0).contains(&fwd[0]));
    }

    #[test]
    fn cached_features_match_crops_when_frozen() {
        let mut net = LaeoNet::new(small_config(), 7).unwrap();
        net.set_frozen(ParamGroup::HeadPose, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_sample(&mut rng, 2);
        let (l, r) = net.sample_tensors(&s).unwrap();
        let fl = net.head_pose_features(Side::Left, &l).unwrap();
        let fr = net.head_pose_features(Side::Right, &r).unwrap();
        let ctx = net.context_for(&s);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let (p1, _) = net
            .forward(
                &PairInput { left: HeadInput::Crops(&l), right: HeadInput::Crops(&r), context: ctx },
                &mut Mode::Train(&mut r1),
            )
            .unwrap();
        let (p2, _) = net
            .forward(
                &PairInput { left: HeadInput::Features(&fl), right: HeadInput::Features(&fr), context: ctx },
                &mut Mode::Train(&mut r2),
            )
            .unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn cached_features_rejected_when_trainable() {
        let net = LaeoNet::new(small_config(), 7).unwrap();
        let f = vec![0.0; net.head_pose_dim()];
        let m = HeadMap::zeros();
        let input = PairInput { left: HeadInput::Features(&f), right: HeadInput::Features(&f), context: ContextInput::Map(&m) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(net.forward(&input, &mut Mode::Train(&mut rng)).is_err());
        assert!(net.forward(&input, &mut Mode::Inference).is_ok());
    }

    /// Central differences on every scalar of a small network.
    fn check_gradients(cfg: LaeoNetConfig, seed: u64) {
        let mut net = LaeoNet::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        // Zero biases on a mostly empty head map put pre-activations exactly
        // on the ReLU kink.
        for p in net.params_mut().params_mut() {
            if p.name.ends_with(".bias") {
                p.data.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
            }
        }
        let s = random_sample(&mut rng, net.config().k);
        let (l, r) = net.sample_tensors(&s).unwrap();
        let loss = |net: &LaeoNet| {
            let input = PairInput { left: HeadInput::Crops(&l), right: HeadInput::Crops(&r), context: net.context_for(&s) };
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let (p, _) = net.forward(&input, &mut Mode::Train(&mut rng)).unwrap();
            crate::losses::laeo_loss(1, p[1])
        };
        let input = PairInput { left: HeadInput::Crops(&l), right: HeadInput::Crops(&r), context: net.context_for(&s) };
        let mut drng = ChaCha8Rng::seed_from_u64(11);
        let (p, trace) = net.forward(&input, &mut Mode::Train(&mut drng)).unwrap();
        let mut grads = net.params().zero_grads();
        net.backward(&trace, crate::losses::laeo_logit_grad(1, &p), &mut grads);
        let h = 1e-6;
        let mut checked = 0;
        for i in 0..net.num_params() {
            let (id, j) = net.params().locate(i).unwrap();
            let orig = net.params().get(id)[j];
            net.params_mut().get_mut(id)[j] = orig + h;
            let lp = loss(&net);
            net.params_mut().get_mut(id)[j] = orig - h;
            let lm = loss(&net);
            net.params_mut().get_mut(id)[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get(id)[j];
            let err = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-4);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {an}");
            checked += 1;
        }
        assert_eq!(checked, net.num_params());
    }

    #[test]
    fn gradients_match_finite_differences_map_branch() {
        check_gradients(small_config(), 1);
    }

    #[test]
    fn gradients_match_finite_differences_geometry_branch() {
        check_gradients(LaeoNetConfig { use_geometry_branch: true, geometry_hidden: [5, 4], ..small_config() }, 2);
    }

    #[test]
    fn gradients_match_finite_differences_unshared() {
        check_gradients(LaeoNetConfig { share_head_pose_weights: false, ..small_config() }, 3);
    }

    #[test]
    fn frozen_groups_get_no_gradient() {
        let mut net = LaeoNet::new(small_config(), 4).unwrap();
        net.set_frozen(ParamGroup::HeadPose, true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_sample(&mut rng, 2);
        let (l, r) = net.sample_tensors(&s).unwrap();
        let input = PairInput { left: HeadInput::Crops(&l), right: HeadInput::Crops(&r), context: net.context_for(&s) };
        let (p, trace) = net.forward(&input, &mut Mode::Train(&mut rng)).unwrap();
        let mut grads = net.params().zero_grads();
        net.backward(&trace, crate::losses::laeo_logit_grad(0, &p), &mut grads);
        for (param, g) in net.params().params().iter().zip(grads.tensors()) {
            if param.group == ParamGroup::HeadPose {
                assert!(g.iter().all(|&v| v == 0.0));
            }
        }
        assert!(grads.tensors().iter().flatten().any(|&v| v != 0.0));
    }
}
