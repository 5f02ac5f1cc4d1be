//! The command implementations. Each takes a loaded [`RunConfig`], reads
//! its inputs, writes its outputs plus a manifest, and returns what it
//! computed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use image::RgbImage;
use laeo::crop::crop_and_resize;
use laeo::eval::{
    compute_ap, frame_level_scores, frame_scores_to_pairs, label_predictions, pair_sequences, pr_curve,
    shot_level_score, ApReport, FramePairScore, MatchMode, WindowScore,
};
use laeo::headmap::{geometry_tuple, render_head_map, HeadMap};
use laeo::model::{LaeoNet, PoseNet};
use laeo::pipeline::{
    materialize_synthetic, pretrain_head_pose, train_laeo, PoseSample, PretrainEpoch, TrainData, TrainLog,
};
use laeo::social::{build_graph, social_edges, CharacterTrackLabel, SocialEdge, SocialGraph};
use laeo::synthgen::{load_pose_list, procedural_corpus, LabeledHeadImage, SyntheticGenerator};
use laeo::tracker::{extract_pair_windows, link_bidirectional};
use laeo::{BoundingBox, FrameGeometry, HeadTrack, PairLabel, TrackPairSample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{self, AnnotationRecord};
use crate::archive::{read_archive, write_archive, INDEX};
use crate::config::{sha256_hex, EvalLevel, RunConfig};
use crate::frames::FrameProvider;
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::manifest::write_manifest;
use crate::records::{frame_scores_by_video, scored_pairs, tracks_by_video, write_scores_csv, ScoreRecord, TrackRecord};

/// Names the cache directory for generated synthetic pools.
pub const CACHE_ENV: &str = "LAEO_CACHE_DIR";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// `output` with `suffix` appended to its file name.
pub fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let recs: Vec<AnnotationRecord> = read_jsonl(path)?;
    annotations::validate(&recs).with_context(|| format!("{}", path.display()))?;
    Ok(recs)
}

/// Links the detections of every video into tracks.
pub fn track(cfg: &RunConfig, detections: &Path, output: &Path) -> Result<Vec<TrackRecord>> {
    let recs = read_annotations(detections)?;
    let per_video: Vec<(String, Vec<Vec<_>>)> = annotations::detections_by_video(&recs)?.into_iter().collect();
    let linked: Vec<Vec<TrackRecord>> = per_video
        .par_iter()
        .map(|(video, frames)| {
            let tracks = link_bidirectional(frames, &cfg.linker).with_context(|| format!("video {video}"))?;
            Ok(tracks
                .into_iter()
                .map(|track| TrackRecord {
                    video_id: video.clone(),
                    track,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let out: Vec<TrackRecord> = linked.into_iter().flatten().collect();
    write_jsonl(output, &out)?;
    write_manifest("track", cfg, &[detections], &[output])?;
    Ok(out)
}

pub fn load_laeo_net(cfg: &RunConfig, checkpoint: &Path) -> Result<LaeoNet> {
    let f = File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    LaeoNet::load(BufReader::new(f), Some(&cfg.model))
        .with_context(|| format!("checkpoint {} does not fit the configured model", checkpoint.display()))
}

fn pair_sample(
    cfg: &RunConfig,
    tracks: &[HeadTrack],
    crops: &HashMap<(usize, usize), RgbImage>,
    frame: &FrameGeometry,
    (left, right, start, k): (usize, usize, usize, usize),
) -> Result<TrackPairSample> {
    let center = start + laeo::tracker::center_offset(k);
    let present: Vec<(usize, BoundingBox)> = tracks
        .iter()
        .filter_map(|t| t.box_at(center).map(|b| (t.track_id, *b)))
        .collect();
    let idx = |id: usize| present.iter().position(|p| p.0 == id).expect("window tracks cover the center");
    let (li, ri) = (idx(left), idx(right));
    let boxes: Vec<BoundingBox> = present.iter().map(|p| p.1).collect();
    let seq = |id: usize| -> Vec<RgbImage> { (start..start + k).map(|f| crops[&(id, f)].clone()).collect() };
    Ok(TrackPairSample {
        left_crops: seq(left),
        right_crops: seq(right),
        head_map: render_head_map(&boxes, li, ri, frame, &cfg.head_map)?,
        geometry: geometry_tuple(&boxes[li], &boxes[ri], frame),
        label: PairLabel::Ambiguous,
        left_box: boxes[li],
        right_box: boxes[ri],
    })
}

/// Window and frame scores of one video: window records in extraction
/// order, then frame records sorted by track pair and frame.
pub fn score_video(
    cfg: &RunConfig,
    net: &LaeoNet,
    video_id: &str,
    tracks: &[HeadTrack],
    frames: &dyn FrameProvider,
) -> Result<Vec<ScoreRecord>> {
    let k = net.config().k;
    let windows = extract_pair_windows(tracks, k, cfg.score.stride)?;
    let by_id: BTreeMap<usize, &HeadTrack> = tracks.iter().map(|t| (t.track_id, t)).collect();
    let mut needed: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for w in &windows {
        for f in w.start_frame..=w.end_frame() {
            needed.entry(f).or_default().extend([w.left_track, w.right_track]);
        }
    }
    let mut crops = HashMap::new();
    let mut geometry = HashMap::new();
    for (f, ids) in needed {
        let img = frames.frame(video_id, f)?;
        geometry.insert(f, FrameGeometry::new(img.width() as f64, img.height() as f64)?);
        for id in ids {
            let b = by_id[&id].box_at(f).expect("window lies within both tracks");
            let c = crop_and_resize(&img, &b.expand(cfg.score.crop_expansion)?).with_context(|| format!("video {video_id} frame {f} track {id}"))?;
            crops.insert((id, f), c);
        }
    }
    let mut scores = Vec::with_capacity(windows.len());
    for w in &windows {
        let sample = pair_sample(cfg, tracks, &crops, &geometry[&w.center_frame], (w.left_track, w.right_track, w.start_frame, k))?;
        scores.push(WindowScore {
            left_track: w.left_track,
            right_track: w.right_track,
            start_frame: w.start_frame,
            k,
            score: net.score_track_pair(&sample)?,
        });
    }
    let per_frame = frame_level_scores(&scores);
    let pairs = frame_scores_to_pairs(video_id, &per_frame, tracks)?;
    let mut out: Vec<ScoreRecord> = scores.iter().map(|w| ScoreRecord::window(video_id, w)).collect();
    out.extend(per_frame.iter().zip(pairs).map(|(s, p)| ScoreRecord::Frame {
        video_id: video_id.to_string(),
        frame: s.frame,
        left_track: s.left_track,
        right_track: s.right_track,
        left_box: p.left_box,
        right_box: p.right_box,
        score: s.score,
    }));
    Ok(out)
}

/// Scores every track pair. Writes JSON lines to `output` and the
/// frame-level scores as CSV next to it.
pub fn score(
    cfg: &RunConfig,
    tracks_path: &Path,
    checkpoint: &Path,
    frames: &dyn FrameProvider,
    output: &Path,
) -> Result<Vec<ScoreRecord>> {
    let net = load_laeo_net(cfg, checkpoint)?;
    let videos: Vec<(String, Vec<HeadTrack>)> = tracks_by_video(read_jsonl(tracks_path)?).into_iter().collect();
    let scored: Vec<Vec<ScoreRecord>> = videos
        .par_iter()
        .map(|(v, tracks)| score_video(cfg, &net, v, tracks, frames).with_context(|| format!("video {v}")))
        .collect::<Result<_>>()?;
    let out: Vec<ScoreRecord> = scored.into_iter().flatten().collect();
    write_jsonl(output, &out)?;
    let csv_path = output.with_extension("csv");
    write_scores_csv(create(&csv_path)?, &out)?;
    write_manifest("score", cfg, &[tracks_path, checkpoint], &[output, &csv_path])?;
    Ok(out)
}

fn write_pr_curve(path: &Path, items: &[(f64, bool)], num_positives: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["threshold", "precision", "recall"])?;
    for p in pr_curve(items, num_positives)? {
        w.write_record([p.threshold.to_string(), p.precision.to_string(), p.recall.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-shot `(score, is_positive)`. A shot is positive when any of its
/// labeled pairs is LAEO and is skipped when all its labels are
/// ambiguous; shots without scored frames score 0.
pub fn shot_items(recs: &[AnnotationRecord], scores: &[ScoreRecord]) -> Result<Vec<(f64, bool)>> {
    let starts = annotations::shot_starts(recs);
    let frame_scores = frame_scores_by_video(scores);
    let mut labels: BTreeMap<(&str, usize), Vec<PairLabel>> = BTreeMap::new();
    for r in recs {
        if let AnnotationRecord::PairLabel { video_id, frame, label, .. } = r {
            let s = annotations::shot_of(&starts[video_id.as_str()], *frame);
            labels.entry((video_id, s)).or_default().push(*label);
        }
    }
    let mut items = Vec::new();
    for (video, st) in &starts {
        let empty = Vec::new();
        let fs = frame_scores.get(video).unwrap_or(&empty);
        for shot in 0..st.len() {
            let l = labels.get(&(video.as_str(), shot));
            if l.is_some_and(|l| l.iter().all(|x| *x == PairLabel::Ambiguous)) {
                continue;
            }
            let positive = l.is_some_and(|l| l.contains(&PairLabel::Laeo));
            let inside: Vec<FramePairScore> = fs
                .iter()
                .filter(|s| annotations::shot_of(st, s.frame) == shot)
                .copied()
                .collect();
            let score = if inside.is_empty() {
                0.0
            } else {
                shot_level_score(&pair_sequences(&inside))?
            };
            items.push((score, positive));
        }
    }
    Ok(items)
}

/// AP of the scores against the annotations. Writes the report to
/// `output` and, when there are positives, the PR curve next to it.
pub fn eval(
    cfg: &RunConfig,
    scores_path: &Path,
    ground_truth: &Path,
    mode: MatchMode,
    level: EvalLevel,
    output: &Path,
) -> Result<ApReport> {
    let scores: Vec<ScoreRecord> = read_jsonl(scores_path)?;
    let recs = read_annotations(ground_truth)?;
    let known: BTreeSet<&str> = recs.iter().map(|r| r.video_id()).collect();
    if let Some(s) = scores.iter().find(|s| !known.contains(s.video_id())) {
        bail!("scores mention video {:?} which has no annotations", s.video_id());
    }
    let (items, num_positives) = match level {
        EvalLevel::Frame => {
            let l = label_predictions(&scored_pairs(&scores), &annotations::ground_truth(&recs)?, mode);
            (l.items, l.num_positives)
        }
        EvalLevel::Shot => {
            let items = shot_items(&recs, &scores)?;
            let n = items.iter().filter(|i| i.1).count();
            (items, n)
        }
    };
    let pr_path = sibling(output, ".pr.csv");
    let mut outputs = vec![output];
    let (ap, pr_curve) = if num_positives == 0 {
        (None, None)
    } else {
        write_pr_curve(&pr_path, &items, num_positives)?;
        outputs.push(&pr_path);
        (Some(compute_ap(&items, num_positives)?), Some(pr_path.display().to_string()))
    };
    let report = ApReport {
        level: match level {
            EvalLevel::Frame => "frame".into(),
            EvalLevel::Shot => "shot".into(),
        },
        mode,
        ap,
        no_positives: num_positives == 0,
        num_predictions: items.len(),
        num_positives,
        num_true_positives: items.iter().filter(|i| i.1).count(),
        pr_curve,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(output, text).with_context(|| format!("writing {}", output.display()))?;
    write_manifest("eval", cfg, &[scores_path, ground_truth], &outputs)?;
    Ok(report)
}

/// Labeled heads from the configured pose list, or procedural ones.
pub fn load_heads(cfg: &RunConfig) -> Result<Vec<LabeledHeadImage>> {
    match &cfg.paths.pose_list {
        Some(list) => {
            let root = cfg
                .paths
                .pose_root
                .clone()
                .or_else(|| list.parent().map(Path::to_path_buf))
                .unwrap_or_default();
            Ok(load_pose_list(list, &root)?)
        }
        None => Ok(procedural_corpus(cfg.heads.procedural_count, cfg.seed)),
    }
}

fn heads_input(cfg: &RunConfig) -> Vec<&Path> {
    cfg.paths.pose_list.as_deref().into_iter().collect()
}

/// Pretrains the head-pose branch and writes it as a pose checkpoint.
pub fn pretrain(cfg: &RunConfig, output: &Path) -> Result<Vec<PretrainEpoch>> {
    let mut heads = load_heads(cfg)?;
    if heads.is_empty() {
        bail!("no labeled heads to pretrain on");
    }
    heads.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_val = (heads.len() as f64 * cfg.heads.validation_fraction).floor() as usize;
    let (val_heads, train_heads) = heads.split_at(n_val);
    let mut train_heads = train_heads.to_vec();
    if cfg.augmentation.mirror {
        let m: Vec<LabeledHeadImage> = train_heads.iter().map(LabeledHeadImage::mirrored).collect();
        train_heads.extend(m);
    }
    let k = cfg.model.k;
    let samples = |hs: &[LabeledHeadImage], salt: u64| -> Result<Vec<PoseSample>> {
        hs.iter()
            .enumerate()
            .map(|(i, h)| Ok(PoseSample::from_head(h, k, &cfg.augmentation, cfg.seed ^ salt ^ i as u64)?))
            .collect()
    };
    let train = samples(&train_heads, 0)?;
    let val = samples(val_heads, 1 << 32)?;
    let mut net = PoseNet::new(cfg.pose_net_config(), cfg.seed)?;
    let log = pretrain_head_pose(&mut net, &train, &val, &cfg.pretrain)?;
    net.save(create(output)?)?;
    let log_path = sibling(output, ".log.csv");
    let mut w = csv::Writer::from_writer(create(&log_path)?);
    w.write_record(["epoch", "steps", "train_loss", "val_loss"])?;
    for e in &log {
        w.write_record([
            e.epoch.to_string(),
            e.steps.to_string(),
            e.train_loss.to_string(),
            e.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    write_manifest("pretrain", cfg, &heads_input(cfg), &[output, &log_path])?;
    Ok(log)
}

/// The configured synthetic pool, freshly generated.
pub fn generate_synthetic(cfg: &RunConfig) -> Result<Vec<TrackPairSample>> {
    let heads = load_heads(cfg)?;
    let gen = SyntheticGenerator::new(&heads, &cfg.synth.placement, cfg.synth_config())?;
    Ok(materialize_synthetic(&gen, cfg.synth.positives, cfg.synth.negatives, cfg.seed)?)
}

#[derive(Serialize)]
struct SyntheticKey<'a> {
    synth: laeo::synthgen::SynthConfig,
    settings: &'a crate::config::SynthSettings,
    heads: &'a crate::config::HeadSettings,
    pose_list: Option<&'a Path>,
    seed: u64,
}

/// Like [`generate_synthetic`], reusing a pool stored under
/// `$LAEO_CACHE_DIR` by an earlier run with the same settings.
pub fn cached_synthetic(cfg: &RunConfig) -> Result<Vec<TrackPairSample>> {
    let Some(root) = std::env::var_os(CACHE_ENV) else {
        return generate_synthetic(cfg);
    };
    let key = SyntheticKey {
        synth: cfg.synth_config(),
        settings: &cfg.synth,
        heads: &cfg.heads,
        pose_list: cfg.paths.pose_list.as_deref(),
        seed: cfg.seed,
    };
    let digest = sha256_hex(&serde_json::to_vec(&key)?);
    let dir = Path::new(&root).join(format!("synthetic-{}", &digest[..16]));
    if dir.join(INDEX).exists() {
        log::info!("reusing synthetic pool {}", dir.display());
        return read_archive(&dir);
    }
    let samples = generate_synthetic(cfg)?;
    write_archive(&dir, &samples)?;
    Ok(samples)
}

/// Generates the synthetic pool into an archive directory.
pub fn synth(cfg: &RunConfig, output: &Path) -> Result<usize> {
    let samples = generate_synthetic(cfg)?;
    write_archive(output, &samples)?;
    write_manifest("synth", cfg, &heads_input(cfg), &[output])?;
    Ok(samples.len())
}

/// Trains the pair classifier and writes its checkpoint and training log.
pub fn train(cfg: &RunConfig, pose_checkpoint: Option<&Path>, output: &Path) -> Result<TrainLog> {
    let archive = |p: &Option<PathBuf>| -> Result<Option<Vec<TrackPairSample>>> {
        p.as_deref()
            .map(|dir| read_archive(dir).with_context(|| format!("archive {}", dir.display())))
            .transpose()
    };
    let real = archive(&cfg.paths.train_archive)?.unwrap_or_default();
    let validation = archive(&cfg.paths.validation_archive)?.unwrap_or_default();
    let synthetic = match archive(&cfg.paths.synthetic_archive)? {
        Some(s) => s,
        None => cached_synthetic(cfg)?,
    };
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(
        [&cfg.paths.train_archive, &cfg.paths.validation_archive, &cfg.paths.synthetic_archive]
            .into_iter()
            .filter_map(|p| p.as_deref()),
    );
    let pose_path = pose_checkpoint.or(cfg.paths.pose_checkpoint.as_deref());
    let pose = match pose_path {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            inputs.push(p);
            Some(PoseNet::load(BufReader::new(f), Some(&cfg.pose_net_config()))?)
        }
        None => None,
    };
    let mut net = LaeoNet::new(cfg.model.clone(), cfg.seed)?;
    let data = TrainData {
        real: &real,
        synthetic: &synthetic,
        validation: &validation,
    };
    let log = train_laeo(&mut net, pose.as_ref(), data, &cfg.train)?;
    net.save(create(output)?)?;
    let log_path = sibling(output, ".log.csv");
    log.write_csv(create(&log_path)?)?;
    write_manifest("train", cfg, &inputs, &[output, &log_path])?;
    Ok(log)
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    #[serde(default)]
    video_id: Option<String>,
    track_id: usize,
    name: String,
}

/// Character labels per video from a `[video_id,]track_id,name` CSV. Rows
/// without a video id apply to every video.
pub fn read_character_labels(path: &Path, videos: &[&str]) -> Result<BTreeMap<String, Vec<CharacterTrackLabel>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out: BTreeMap<String, Vec<CharacterTrackLabel>> = BTreeMap::new();
    for (i, row) in r.deserialize::<LabelRow>().enumerate() {
        let row = row.with_context(|| format!("{}: line {}", path.display(), i + 2))?;
        let label = CharacterTrackLabel {
            track_id: row.track_id,
            character_name: row.name,
        };
        match row.video_id {
            Some(v) => out.entry(v).or_default().push(label),
            None => {
                for v in videos {
                    out.entry(v.to_string()).or_default().push(label.clone());
                }
            }
        }
    }
    Ok(out)
}

/// Sums frame counts of the same character pair over videos; the mean
/// score is weighted by co-occurrence frames.
pub fn merge_edges(per_video: Vec<Vec<SocialEdge>>) -> Vec<SocialEdge> {
    let mut m: BTreeMap<(String, String), (usize, usize, f64)> = BTreeMap::new();
    for e in per_video.into_iter().flatten() {
        let key = if e.char_a <= e.char_b {
            (e.char_a, e.char_b)
        } else {
            (e.char_b, e.char_a)
        };
        let acc = m.entry(key).or_default();
        acc.0 += e.cooccur_frames;
        acc.1 += e.laeo_frames;
        acc.2 += e.mean_laeo_score * e.cooccur_frames as f64;
    }
    m.into_iter()
        .map(|((a, b), (n, laeo, sum))| SocialEdge {
            char_a: a,
            char_b: b,
            cooccur_frames: n,
            laeo_frames: laeo,
            mean_laeo_score: sum / n as f64,
            ratio: laeo as f64 / n as f64,
        })
        .collect()
}

/// Builds the character graph. Writes JSON to `output` and an SVG plot
/// next to it.
pub fn social(cfg: &RunConfig, tracks_path: &Path, scores_path: &Path, labels: &Path, output: &Path) -> Result<SocialGraph> {
    let tracks = tracks_by_video(read_jsonl(tracks_path)?);
    let scores = frame_scores_by_video(&read_jsonl::<ScoreRecord>(scores_path)?);
    let videos: Vec<&str> = tracks.keys().map(String::as_str).collect();
    let labels_by_video = read_character_labels(labels, &videos)?;
    let mut per_video = Vec::new();
    for (video, ts) in &tracks {
        let Some(l) = labels_by_video.get(video) else {
            log::warn!("video {video} has no character labels; skipped");
            continue;
        };
        let s = scores.get(video).map(Vec::as_slice).unwrap_or(&[]);
        per_video.push(social_edges(ts, l, s, cfg.social.laeo_threshold).with_context(|| format!("video {video}"))?);
    }
    let graph = build_graph(&merge_edges(per_video));
    let mut text = serde_json::to_string_pretty(&graph)?;
    text.push('\n');
    std::fs::write(output, text).with_context(|| format!("writing {}", output.display()))?;
    let svg = output.with_extension("svg");
    std::fs::write(&svg, graph.to_svg()).with_context(|| format!("writing {}", svg.display()))?;
    write_manifest("social", cfg, &[tracks_path, scores_path, labels], &[output, &svg])?;
    Ok(graph)
}

/// Renders the head map of two tracks at one frame as a PNG.
pub fn render_headmap(
    cfg: &RunConfig,
    tracks_path: &Path,
    video: &str,
    frame: usize,
    (left, right): (usize, usize),
    frame_size: (f64, f64),
    output: &Path,
) -> Result<HeadMap> {
    let tracks = tracks_by_video(read_jsonl(tracks_path)?);
    let ts = tracks.get(video).ok_or_else(|| anyhow!("no tracks for video {video:?}"))?;
    let present: Vec<(usize, BoundingBox)> = ts.iter().filter_map(|t| t.box_at(frame).map(|b| (t.track_id, *b))).collect();
    let idx = |id: usize| {
        present
            .iter()
            .position(|p| p.0 == id)
            .ok_or_else(|| anyhow!("track {id} is not present at frame {frame}"))
    };
    let boxes: Vec<BoundingBox> = present.iter().map(|p| p.1).collect();
    let geometry = FrameGeometry::new(frame_size.0, frame_size.1)?;
    let map = render_head_map(&boxes, idx(left)?, idx(right)?, &geometry, &cfg.head_map)?;
    map.to_image().save(output).with_context(|| format!("writing {}", output.display()))?;
    write_manifest("render-headmap", cfg, &[tracks_path], &[output])?;
    Ok(map)
}

/// One line per epoch, as printed by the training command.
pub fn epoch_line(e: &laeo::pipeline::TrainEpoch) -> String {
    let val = e.val_ap.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    format!(
        "epoch {} step {} loss {:.6} val_AP {} lr {:e} train_acc {:.4}",
        e.epoch, e.step, e.loss, val, e.lr, e.train_acc
    )
}
