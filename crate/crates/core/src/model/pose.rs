//! Head-pose branch with a linear `(yaw, pitch, roll)` head, used only to
//! pretrain the branch before it is copied into [`super::LaeoNet`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::branch::{embed, embed_backward, ConvStack, EmbedTrace, StackTrace};
use super::{build_stack, default_head_pose_layers, digest_json, ConvLayerConfig, LaeoNetConfig, Mode, CROP, HEAD_POSE_PREFIX};
use crate::error::{Error, Result};
use crate::nn::{Dense, DenseCache, Grads, ParamGroup, ParamStore};
use crate::types::{NormalizedPose, PoseAngles, CROP_SIZE, DEFAULT_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseNetConfig {
    pub k: usize,
    pub head_pose_layers: Vec<ConvLayerConfig>,
    pub dropout_rate: f64,
}

impl Default for PoseNetConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            head_pose_layers: default_head_pose_layers(),
            dropout_rate: 0.5,
        }
    }
}

impl From<&LaeoNetConfig> for PoseNetConfig {
    fn from(c: &LaeoNetConfig) -> Self {
        Self {
            k: c.k,
            head_pose_layers: c.head_pose_layers.clone(),
            dropout_rate: c.dropout_rate,
        }
    }
}

impl PoseNetConfig {
    pub fn validate(&self) -> Result<()> {
        LaeoNetConfig {
            k: self.k,
            head_pose_layers: self.head_pose_layers.clone(),
            dropout_rate: self.dropout_rate,
            ..LaeoNetConfig::default()
        }
        .validate()
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

#[derive(Debug, Clone)]
pub struct PoseTrace {
    stack: StackTrace,
    embed: EmbedTrace,
    head: DenseCache,
}

#[derive(Debug, Clone)]
pub struct PoseNet {
    config: PoseNetConfig,
    store: ParamStore,
    stack: ConvStack,
    head: Dense,
}

impl PoseNet {
    pub fn new(config: PoseNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stack = build_stack(
            &mut store,
            HEAD_POSE_PREFIX,
            ParamGroup::HeadPose,
            &config.head_pose_layers,
            [config.k, CROP, CROP],
            &mut rng,
        );
        let head = Dense::new(&mut store, "pose_head", ParamGroup::PoseHead, stack.output_dim(), 3, &mut rng);
        Ok(Self {
            config,
            store,
            stack,
            head,
        })
    }

    pub fn config(&self) -> &PoseNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check(&self, crops: &[f64]) -> Result<()> {
        if crops.len() != self.stack.input_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{CROP_SIZE}x{CROP_SIZE}x3 values", self.config.k),
                got: crops.len().to_string(),
            });
        }
        Ok(())
    }

    /// Normalized `(yaw, pitch, roll)` for normalized crops, dropout off.
    pub fn predict_normalized(&self, crops: &[f64]) -> Result<NormalizedPose> {
        self.check(crops)?;
        let f = self.stack.forward(&self.store, crops)?;
        let (e, _) = embed(&f, None);
        let o = self.head.forward(&self.store, &e)?;
        Ok(NormalizedPose::new(o[0], o[1], o[2]))
    }

    /// Angles in radians, each clamped into `[-pi, pi]`.
    pub fn predict_pose(&self, crops: &[f64]) -> Result<PoseAngles> {
        Ok(self.predict_normalized(crops)?.to_radians())
    }

    pub fn forward(&self, crops: &[f64], mode: &mut Mode) -> Result<(NormalizedPose, PoseTrace)> {
        self.check(crops)?;
        let (f, stack) = self.stack.forward_traced(&self.store, crops.to_vec())?;
        let (e, embed_trace) = embed(&f, mode.dropout(self.config.dropout_rate));
        let (o, head) = self.head.forward_cached(&self.store, e)?;
        Ok((
            NormalizedPose::new(o[0], o[1], o[2]),
            PoseTrace {
                stack,
                embed: embed_trace,
                head,
            },
        ))
    }

    pub fn backward(&self, trace: &PoseTrace, dpred: [f64; 3], grads: &mut Grads) {
        let de = self
            .head
            .backward(&self.store, &trace.head, &dpred, grads, true)
            .expect("input grad requested");
        let df = embed_backward(&trace.embed, &de);
        self.stack.backward(&self.store, &trace.stack, df, grads);
    }
}
