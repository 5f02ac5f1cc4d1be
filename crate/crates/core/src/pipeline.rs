//! Two-stage training. The head-pose branch is first pretrained as a pose
//! regressor, then frozen while the rest of the pair classifier trains on
//! batches mixing real and synthetic pairs plus one mined hard negative.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crop::normalize_sequence;
use crate::error::{Error, Result};
use crate::eval::compute_ap;
use crate::headmap::HeadMap;
use crate::losses::{head_pose_loss, head_pose_loss_grad, laeo_logit_grad, laeo_loss, PoseLossWeights};
use crate::model::{ContextInput, HeadInput, LaeoNet, Mode, PairInput, PoseNet, Side};
use crate::nn::{Adam, AdamConfig, ParamGroup};
use crate::synthgen::{replicate_to_sequence, AugmentationSpec, LabeledHeadImage, SyntheticGenerator};
use crate::types::{GeometryTuple, PoseAngles, TrackPairSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss_weights: PoseLossWeights,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            loss_weights: PoseLossWeights::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidValue("pretrain batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidValue(format!("pretrain lr {} must be finite and >= 0", self.lr)));
        }
        self.loss_weights.validate()
    }
}

/// Normalized crop sequence with its pose label.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub crops: Vec<f64>,
    pub target: PoseAngles,
}

impl PoseSample {
    /// A sequence of `k` augmented replicas of one labeled head.
    pub fn from_head(head: &LabeledHeadImage, k: usize, aug: &AugmentationSpec, seed: u64) -> Result<Self> {
        let crops = replicate_to_sequence(head, k, aug, seed)?;
        Ok(Self {
            crops: normalize_sequence(&crops)?,
            target: head.pose,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub steps: usize,
    /// Mean loss over the training set, dropout off, after the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

fn pose_set_loss(net: &PoseNet, set: &[PoseSample], w: &PoseLossWeights) -> Result<f64> {
    let mut total = 0.0;
    for s in set {
        let p = net.predict_normalized(&s.crops)?;
        total += head_pose_loss(&p, &s.target.normalized(), w);
    }
    Ok(total / set.len() as f64)
}

/// Minimizes the head-pose loss over the branch and the pose head.
pub fn pretrain_head_pose(
    net: &mut PoseNet,
    train: &[PoseSample],
    val: &[PoseSample],
    config: &PretrainConfig,
) -> Result<Vec<PretrainEpoch>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("pretraining set".into()));
    }
    let w = config.loss_weights;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam, net.params());
    let frozen = Default::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let mut grads = net.params().zero_grads();
            let mut loss = 0.0;
            for &i in chunk {
                let s = &train[i];
                let target = s.target.normalized();
                let (p, trace) = net.forward(&s.crops, &mut Mode::Train(&mut rng))?;
                loss += head_pose_loss(&p, &target, &w);
                let g = head_pose_loss_grad(&p, &target, &w).map(|v| v / chunk.len() as f64);
                net.backward(&trace, g, &mut grads);
            }
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("pose loss {loss} over samples {chunk:?}"),
                });
            }
            adam.step(net.params_mut(), &grads, &frozen, config.lr);
        }
        log.push(PretrainEpoch {
            epoch,
            steps: step,
            train_loss: pose_set_loss(net, train, &w)?,
            val_loss: if val.is_empty() {
                None
            } else {
                Some(pose_set_loss(net, val, &w)?)
            },
        });
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub positives_per_batch: usize,
    pub negatives_per_batch: usize,
    pub hard_negatives_per_batch: usize,
    /// Defaults to enough steps to visit the larger positive pool once.
    pub steps_per_epoch: Option<usize>,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_min: f64,
    pub synthetic_only_epochs: usize,
    pub curriculum_step_epochs: usize,
    pub tau_init: f64,
    pub tau_step: f64,
    pub tau_max: f64,
    pub freeze_head_pose: bool,
    /// Extra epochs with the validation set added to the real pool.
    pub refine_epochs: usize,
    /// Stop once training accuracy reaches this value.
    pub stop_at_train_acc: Option<f64>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            positives_per_batch: 4,
            negatives_per_batch: 4,
            hard_negatives_per_batch: 1,
            steps_per_epoch: None,
            lr_init: 1e-4,
            lr_factor: 0.2,
            lr_patience: 5,
            lr_min: 1e-8,
            synthetic_only_epochs: 2,
            curriculum_step_epochs: 2,
            tau_init: 0.5,
            tau_step: 0.1,
            tau_max: 1.0,
            freeze_head_pose: true,
            refine_epochs: 0,
            stop_at_train_acc: None,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

pub const BATCH_SIZE: usize = 9;

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.positives_per_batch + self.negatives_per_batch + self.hard_negatives_per_batch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidValue(m));
        if self.batch_size() != BATCH_SIZE {
            return bad(format!("batch composition sums to {}, expected {BATCH_SIZE}", self.batch_size()));
        }
        if self.positives_per_batch == 0 || self.negatives_per_batch == 0 {
            return bad("batches need positives and negatives".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return bad(format!("need 0 <= lr_min ({}) <= lr_init ({})", self.lr_min, self.lr_init));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor {} must be in (0, 1)", self.lr_factor));
        }
        if self.lr_patience == 0 || self.curriculum_step_epochs == 0 {
            return bad("lr_patience and curriculum_step_epochs must be positive".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive".into());
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.tau_init) || !unit.contains(&self.tau_max) || !(self.tau_step >= 0.0) {
            return bad("tau_init and tau_max must lie in [0, 1], tau_step >= 0".into());
        }
        Ok(())
    }
}

/// Curriculum difficulty for a 0-based epoch.
pub fn tau_curr(epoch: usize, config: &TrainConfig) -> f64 {
    let raised = config.tau_init + config.tau_step * (epoch / config.curriculum_step_epochs) as f64;
    raised.min(config.tau_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    Real,
    Synthetic,
}

/// Pool feeding the positives and negatives of a step; `step` is 1-based.
pub fn batch_source(epoch: usize, step: usize, config: &TrainConfig) -> PoolSource {
    if epoch < config.synthetic_only_epochs || step % 2 == 0 {
        PoolSource::Synthetic
    } else {
        PoolSource::Real
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleRef {
    pub source: PoolSource,
    pub index: usize,
}

/// Negatives scored at least `1 - tau`.
pub fn mine_hard_negatives(scored: &[(SampleRef, f64)], tau: f64) -> Vec<SampleRef> {
    let lower = 1.0 - tau;
    scored.iter().filter(|(_, s)| *s >= lower).map(|(r, _)| *r).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Positive,
    Negative,
    Hard,
    /// Ordinary negative used because the hard pool was empty.
    SubstituteNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub sample: SampleRef,
    pub label: usize,
    pub kind: ItemKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub epoch: usize,
    pub step: usize,
    pub source: PoolSource,
    pub items: Vec<BatchItem>,
}

/// Positive and negative indices of one pool.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolIndex {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Reshuffled pass over a list of indices.
#[derive(Debug, Clone)]
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(items: &[usize]) -> Self {
        Self {
            order: items.to_vec(),
            pos: items.len(),
        }
    }

    fn next(&mut self, rng: &mut impl Rng) -> Option<usize> {
        if self.order.is_empty() {
            return None;
        }
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        Some(self.order[self.pos - 1])
    }
}

/// Draws batches, cycling through each pool's positives and negatives in
/// reshuffled order.
#[derive(Debug, Clone)]
pub struct BatchComposer {
    config: TrainConfig,
    cyclers: BTreeMap<(PoolSource, usize), Cycler>,
}

impl BatchComposer {
    pub fn new(real: &PoolIndex, synthetic: &PoolIndex, config: &TrainConfig) -> Self {
        let mut cyclers = BTreeMap::new();
        for (src, idx) in [(PoolSource::Real, real), (PoolSource::Synthetic, synthetic)] {
            cyclers.insert((src, 1), Cycler::new(&idx.positives));
            cyclers.insert((src, 0), Cycler::new(&idx.negatives));
        }
        Self {
            config: config.clone(),
            cyclers,
        }
    }

    fn draw(&mut self, source: PoolSource, label: usize, rng: &mut ChaCha8Rng) -> Result<SampleRef> {
        let index = self.cyclers.get_mut(&(source, label)).and_then(|c| c.next(rng)).ok_or_else(|| {
            let what = if label == 1 { "positives" } else { "negatives" };
            Error::Empty(format!("{source:?} pool has no {what}"))
        })?;
        Ok(SampleRef { source, index })
    }

    /// One batch. During synthetic-only epochs only synthetic hard
    /// negatives are eligible.
    pub fn compose(&mut self, epoch: usize, step: usize, hard_pool: &[SampleRef], rng: &mut ChaCha8Rng) -> Result<Batch> {
        let source = batch_source(epoch, step, &self.config);
        let mut items = Vec::with_capacity(self.config.batch_size());
        for (label, n, kind) in [
            (1, self.config.positives_per_batch, ItemKind::Positive),
            (0, self.config.negatives_per_batch, ItemKind::Negative),
        ] {
            for _ in 0..n {
                items.push(BatchItem {
                    sample: self.draw(source, label, rng)?,
                    label,
                    kind,
                });
            }
        }
        let synthetic_only = epoch < self.config.synthetic_only_epochs;
        let eligible: Vec<SampleRef> = hard_pool
            .iter()
            .copied()
            .filter(|r| !synthetic_only || r.source == PoolSource::Synthetic)
            .collect();
        for _ in 0..self.config.hard_negatives_per_batch {
            if eligible.is_empty() {
                log::debug!("epoch {epoch} step {step}: hard pool empty, using an ordinary negative");
                items.push(BatchItem {
                    sample: self.draw(source, 0, rng)?,
                    label: 0,
                    kind: ItemKind::SubstituteNegative,
                });
            } else {
                items.push(BatchItem {
                    sample: eligible[rng.gen_range(0..eligible.len())],
                    label: 0,
                    kind: ItemKind::Hard,
                });
            }
        }
        Ok(Batch {
            epoch,
            step,
            source,
            items,
        })
    }
}

/// Reduces the rate by `factor` after `patience` evaluations without a new
/// best metric, never below `min`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    min: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.lr_init,
            factor: config.lr_factor,
            patience: config.lr_patience,
            min: config.lr_min,
            best: None,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, metric: f64) -> f64 {
        if self.best.map_or(true, |b| metric > b) {
            self.best = Some(metric);
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min);
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone)]
enum PreparedContext {
    Map(HeadMap),
    Geometry(GeometryTuple),
}

/// A training pair converted to network inputs. Head-pose inputs hold
/// branch features when the branch was frozen at preparation time.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    left: Vec<f64>,
    right: Vec<f64>,
    cached: bool,
    context: PreparedContext,
    pub label: usize,
}

impl PreparedSample {
    fn head<'a>(&self, v: &'a [f64]) -> HeadInput<'a> {
        if self.cached {
            HeadInput::Features(v)
        } else {
            HeadInput::Crops(v)
        }
    }

    fn input(&self) -> PairInput<'_> {
        PairInput {
            left: self.head(&self.left),
            right: self.head(&self.right),
            context: match &self.context {
                PreparedContext::Map(m) => ContextInput::Map(m),
                PreparedContext::Geometry(g) => ContextInput::Geometry(*g),
            },
        }
    }
}

pub fn prepare_samples(net: &LaeoNet, samples: &[TrackPairSample]) -> Result<Vec<PreparedSample>> {
    let cached = net.frozen().contains(&ParamGroup::HeadPose);
    samples
        .iter()
        .map(|s| {
            let label = s
                .label
                .class()
                .ok_or_else(|| Error::InvalidValue("ambiguous pairs cannot be used for training".into()))?;
            let (mut l, mut r) = net.sample_tensors(s)?;
            if cached {
                l = net.head_pose_features(Side::Left, &l)?;
                r = net.head_pose_features(Side::Right, &r)?;
            }
            let context = if net.config().use_geometry_branch {
                PreparedContext::Geometry(s.geometry)
            } else {
                PreparedContext::Map(s.head_map.clone())
            };
            Ok(PreparedSample {
                left: l,
                right: r,
                cached,
                context,
                label,
            })
        })
        .collect()
}

fn pool_index(samples: &[PreparedSample]) -> PoolIndex {
    let mut idx = PoolIndex::default();
    for (i, s) in samples.iter().enumerate() {
        if s.label == 1 {
            idx.positives.push(i);
        } else {
            idx.negatives.push(i);
        }
    }
    idx
}

fn predict(net: &LaeoNet, s: &PreparedSample) -> Result<f64> {
    Ok(net.forward(&s.input(), &mut Mode::Inference)?.0[1])
}

/// Materializes `n_pos` positives and `n_neg` negatives from a generator.
pub fn materialize_synthetic(gen: &SyntheticGenerator, n_pos: usize, n_neg: usize, seed: u64) -> Result<Vec<TrackPairSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..n_pos {
        out.push(gen.positive(&mut rng)?.sample);
    }
    for _ in 0..n_neg {
        out.push(gen.negative(&mut rng)?.sample);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainData<'a> {
    pub real: &'a [TrackPairSample],
    pub synthetic: &'a [TrackPairSample],
    pub validation: &'a [TrackPairSample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub val_ap: Option<f64>,
    /// Rate used during the epoch.
    pub lr: f64,
    /// Accuracy over both training pools, dropout off, after the epoch.
    pub train_acc: f64,
    pub tau: f64,
    pub hard_pool_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<TrainEpoch>,
    pub batches: Vec<Batch>,
}

impl TrainLog {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.into());
        out.write_record(["epoch", "step", "loss", "val_AP", "lr", "train_acc"]).map_err(io)?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.step.to_string(),
                e.loss.to_string(),
                e.val_ap.map(|v| v.to_string()).unwrap_or_default(),
                e.lr.to_string(),
                e.train_acc.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn head_pose_snapshot(net: &LaeoNet) -> Vec<Vec<u64>> {
    net.params()
        .params()
        .iter()
        .filter(|p| p.group == ParamGroup::HeadPose)
        .map(|p| p.data.iter().map(|v| v.to_bits()).collect())
        .collect()
}

/// Trains the pair classifier. `pretrained`, when given, replaces the
/// head-pose branch weights first; otherwise the weights already in `net`
/// are used.
pub fn train_laeo(
    net: &mut LaeoNet,
    pretrained: Option<&PoseNet>,
    data: TrainData,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if let Some(p) = pretrained {
        net.load_head_pose(p)?;
    }
    net.set_frozen(ParamGroup::HeadPose, config.freeze_head_pose);
    let frozen = net.frozen().clone();
    let snapshot = config.freeze_head_pose.then(|| head_pose_snapshot(net));

    let mut real = prepare_samples(net, data.real)?;
    let synth = prepare_samples(net, data.synthetic)?;
    let val = prepare_samples(net, data.validation)?;
    let val_positives = val.iter().filter(|s| s.label == 1).count();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam, net.params());
    let mut schedule = PlateauSchedule::new(config);
    let mut log = TrainLog::default();
    let mut global_step = 0;
    let total_epochs = config.epochs + config.refine_epochs;
    let mut composer = None;

    for epoch in 0..total_epochs {
        if epoch == config.epochs && epoch > 0 && !val.is_empty() {
            real.extend(val.iter().cloned());
            composer = None;
        }
        let real_idx = pool_index(&real);
        let synth_idx = pool_index(&synth);
        let composer = composer.get_or_insert_with(|| BatchComposer::new(&real_idx, &synth_idx, config));
        let steps = config.steps_per_epoch.unwrap_or_else(|| {
            let most = real_idx.positives.len().max(synth_idx.positives.len());
            most.div_ceil(config.positives_per_batch).max(1)
        });

        let tau = tau_curr(epoch, config);
        let mut scored = Vec::new();
        for (source, pool, idx) in [(PoolSource::Real, &real, &real_idx), (PoolSource::Synthetic, &synth, &synth_idx)] {
            for &i in &idx.negatives {
                scored.push((SampleRef { source, index: i }, predict(net, &pool[i])?));
            }
        }
        let hard = mine_hard_negatives(&scored, tau);

        let lr = schedule.lr();
        let mut epoch_loss = 0.0;
        for step in 1..=steps {
            global_step += 1;
            let batch = composer.compose(epoch, step, &hard, &mut rng)?;
            let mut grads = net.params().zero_grads();
            let mut loss = 0.0;
            let n = batch.items.len() as f64;
            for item in &batch.items {
                let s = match item.sample.source {
                    PoolSource::Real => &real[item.sample.index],
                    PoolSource::Synthetic => &synth[item.sample.index],
                };
                let (p, trace) = net.forward(&s.input(), &mut Mode::Train(&mut rng))?;
                loss += laeo_loss(item.label, p[1]) / n;
                let g = laeo_logit_grad(item.label, &p);
                net.backward(&trace, [g[0] / n, g[1] / n], &mut grads);
            }
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: global_step,
                    detail: format!("batch loss {loss}, lr {lr}"),
                });
            }
            adam.step(net.params_mut(), &grads, &frozen, lr);
            epoch_loss += loss;
            log.batches.push(batch);
        }

        let mut correct = 0;
        for s in real.iter().chain(&synth) {
            correct += usize::from((predict(net, s)? >= 0.5) == (s.label == 1));
        }
        let train_acc = correct as f64 / (real.len() + synth.len()).max(1) as f64;
        let val_ap = if val_positives > 0 {
            let items: Vec<(f64, bool)> = val
                .iter()
                .map(|s| Ok((predict(net, s)?, s.label == 1)))
                .collect::<Result<_>>()?;
            Some(compute_ap(&items, val_positives)?)
        } else {
            None
        };
        if let Some(ap) = val_ap {
            schedule.observe(ap);
        }
        log.epochs.push(TrainEpoch {
            epoch,
            step: global_step,
            loss: epoch_loss / steps as f64,
            val_ap,
            lr,
            train_acc,
            tau,
            hard_pool_size: hard.len(),
        });
        if config.stop_at_train_acc.is_some_and(|t| train_acc >= t) {
            break;
        }
    }

    if let Some(before) = snapshot {
        assert!(head_pose_snapshot(net) == before, "frozen head-pose parameters changed during training");
    }
    Ok(log)
}
