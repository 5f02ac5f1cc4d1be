//! Run configuration: one TOML file holding every stage's settings.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use laeo::eval::MatchMode;
use laeo::headmap::HeadMapSpec;
use laeo::model::{LaeoNetConfig, PoseNetConfig};
use laeo::pipeline::{PretrainConfig, TrainConfig};
use laeo::social::DEFAULT_LAEO_THRESHOLD;
use laeo::synthgen::{AugmentationSpec, CompatibilityConfig, RandomPlacement, SynthConfig};
use laeo::tracker::LinkerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where labeled head crops come from when no pose list is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSettings {
    /// Procedurally rendered heads used in place of a pose list.
    pub procedural_count: usize,
    /// Share of heads held out for validation during pretraining.
    pub validation_fraction: f64,
}

impl Default for HeadSettings {
    fn default() -> Self {
        Self {
            procedural_count: 200,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub positives: usize,
    pub negatives: usize,
    pub compatibility: CompatibilityConfig,
    pub placement: RandomPlacement,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            positives: 64,
            negatives: 64,
            compatibility: CompatibilityConfig::default(),
            placement: RandomPlacement::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSettings {
    /// Frames between consecutive window starts.
    pub stride: usize,
    /// Head boxes are grown about their center by this factor before
    /// cropping; 1.0 crops the tight box.
    pub crop_expansion: f64,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            stride: 1,
            crop_expansion: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalLevel {
    Frame,
    Shot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub mode: MatchMode,
    pub level: EvalLevel,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mode: MatchMode::IouHeads,
            level: EvalLevel::Frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SocialSettings {
    pub laeo_threshold: f64,
}

impl Default for SocialSettings {
    fn default() -> Self {
        Self {
            laeo_threshold: DEFAULT_LAEO_THRESHOLD,
        }
    }
}

/// Optional data locations. Relative paths resolve against the working
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Frames stored as `<frames_root>/<video_id>/<frame:06>.png`.
    pub frames_root: Option<PathBuf>,
    /// Pose list (`path x1 y1 x2 y2 yaw pitch roll` per line).
    pub pose_list: Option<PathBuf>,
    pub pose_root: Option<PathBuf>,
    pub pose_checkpoint: Option<PathBuf>,
    pub train_archive: Option<PathBuf>,
    pub synthetic_archive: Option<PathBuf>,
    pub validation_archive: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds every stage; copied into `train.seed` and `pretrain.seed`.
    pub seed: u64,
    pub model: LaeoNetConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub linker: LinkerConfig,
    pub head_map: HeadMapSpec,
    pub augmentation: AugmentationSpec,
    pub heads: HeadSettings,
    pub synth: SynthSettings,
    pub score: ScoreSettings,
    pub eval: EvalSettings,
    pub social: SocialSettings,
    pub paths: Paths,
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies `key.path=value`
    /// overrides and the seed, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.pretrain.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.pretrain.validate()?;
        self.linker.validate()?;
        self.head_map.validate()?;
        self.augmentation.validate()?;
        if self.score.stride == 0 {
            bail!("score.stride must be >= 1");
        }
        if !(self.score.crop_expansion > 0.0 && self.score.crop_expansion.is_finite()) {
            bail!("score.crop_expansion must be positive");
        }
        if !(0.0..1.0).contains(&self.heads.validation_fraction) {
            bail!("heads.validation_fraction must lie in [0, 1)");
        }
        let p = &self.synth.placement;
        if !(p.min_head > 0.0 && p.min_head <= p.max_head && p.max_head <= p.frame_width.min(p.frame_height)) {
            bail!("synth.placement head sizes must satisfy 0 < min_head <= max_head <= frame size");
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            k: self.model.k,
            augmentation: self.augmentation,
            compatibility: self.synth.compatibility,
            head_map: self.head_map,
        }
    }

    pub fn pose_net_config(&self) -> PoseNetConfig {
        PoseNetConfig::from(&self.model)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Sets `a.b.c` in `table`. The value is read as a TOML literal when it
/// parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} is not of the form key=value"))?;
    let key = key.trim();
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} has an empty component");
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {key:?}: {p:?} is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
