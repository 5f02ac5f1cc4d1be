//! Average precision of LAEO pair predictions, plus the frame- and
//! shot-level scoring used to turn window scores into predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracker::center_offset;
use crate::types::{intersection_over_head_area, iou, BoundingBox, HeadTrack, PairLabel};

/// Overlap that a predicted head must strictly exceed to match.
pub const MATCH_THRESHOLD: f64 = 0.5;

/// Length of the temporal smoothing window used for shot scores.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    #[serde(default)]
    pub video_id: String,
    pub frame_index: usize,
    pub left_box: BoundingBox,
    pub right_box: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPair {
    #[serde(default)]
    pub video_id: String,
    pub frame_index: usize,
    pub box_a: BoundingBox,
    pub box_b: BoundingBox,
    pub label: PairLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Ground-truth boxes are heads; overlap is IoU.
    IouHeads,
    /// Ground-truth boxes are bodies; overlap is intersection over head area.
    IohaBodies,
}

pub fn overlap(mode: MatchMode, head: &BoundingBox, gt: &BoundingBox) -> f64 {
    match mode {
        MatchMode::IouHeads => iou(head, gt),
        MatchMode::IohaBodies => intersection_over_head_area(head, gt),
    }
}

/// Both predicted heads match distinct ground-truth boxes, in either
/// assignment, with overlap above [`MATCH_THRESHOLD`].
pub fn match_pair(pred: &ScoredPair, gt: &GroundTruthPair, mode: MatchMode) -> bool {
    if pred.frame_index != gt.frame_index || pred.video_id != gt.video_id {
        return false;
    }
    let ok = |h: &BoundingBox, g: &BoundingBox| overlap(mode, h, g) > MATCH_THRESHOLD;
    (ok(&pred.left_box, &gt.box_a) && ok(&pred.right_box, &gt.box_b))
        || (ok(&pred.left_box, &gt.box_b) && ok(&pred.right_box, &gt.box_a))
}

/// Predictions labeled correct or not, ready for [`compute_ap`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPredictions {
    /// `(score, is_true_positive)` in matching order.
    pub items: Vec<(f64, bool)>,
    /// LAEO ground-truth pairs, matched or not.
    pub num_positives: usize,
}

fn ranking_order(a: &ScoredPair, b: &ScoredPair) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then(a.frame_index.cmp(&b.frame_index))
        .then(a.left_box.x1().total_cmp(&b.left_box.x1()))
}

/// Greedy one-to-one matching in descending score order. A prediction
/// matching an unused LAEO pair is a true positive; one that only matches
/// an ambiguous pair is dropped; everything else is a false positive.
pub fn label_predictions(preds: &[ScoredPair], gts: &[GroundTruthPair], mode: MatchMode) -> LabeledPredictions {
    let mut by_frame: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_frame.entry((g.video_id.as_str(), g.frame_index)).or_default().push(i);
    }
    let num_positives = gts.iter().filter(|g| g.label == PairLabel::Laeo).count();
    let mut used = vec![false; gts.len()];
    let mut order: Vec<&ScoredPair> = preds.iter().collect();
    order.sort_by(|a, b| ranking_order(a, b));
    let mut items = Vec::with_capacity(preds.len());
    for p in order {
        let cands = by_frame.get(&(p.video_id.as_str(), p.frame_index));
        let find = |label: PairLabel, used: &[bool]| {
            cands.and_then(|c| {
                c.iter()
                    .copied()
                    .find(|&g| !used[g] && gts[g].label == label && match_pair(p, &gts[g], mode))
            })
        };
        if let Some(g) = find(PairLabel::Laeo, &used) {
            used[g] = true;
            items.push((p.score, true));
        } else if find(PairLabel::Ambiguous, &used).is_some() {
            continue;
        } else {
            items.push((p.score, false));
        }
    }
    LabeledPredictions { items, num_positives }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall after each group of equal scores, best first.
pub fn pr_curve(items: &[(f64, bool)], num_positives: usize) -> Result<Vec<PrPoint>> {
    if num_positives == 0 {
        return Err(Error::NoPositives);
    }
    let tp_total = items.iter().filter(|i| i.1).count();
    if tp_total > num_positives {
        return Err(Error::InvalidValue(format!(
            "{tp_total} true positives exceed {num_positives} positives"
        )));
    }
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / num_positives as f64,
        });
    }
    Ok(out)
}

/// Area under the exact precision-recall staircase: the sum over recall
/// increments of the precision reached there. Equal scores form one step.
pub fn compute_ap(items: &[(f64, bool)], num_positives: usize) -> Result<f64> {
    let curve = pr_curve(items, num_positives)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in curve {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(ap)
}

/// Score of one window of a track pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub left_track: usize,
    pub right_track: usize,
    pub start_frame: usize,
    pub k: usize,
    pub score: f64,
}

impl WindowScore {
    pub fn center_frame(&self) -> usize {
        self.start_frame + center_offset(self.k)
    }

    pub fn end_frame(&self) -> usize {
        self.start_frame + self.k - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePairScore {
    pub left_track: usize,
    pub right_track: usize,
    pub frame: usize,
    pub score: f64,
}

/// Every frame covered by a window gets the score of the covering window
/// whose center frame is nearest (earlier center on ties). Output is sorted
/// by track pair, then frame.
pub fn frame_level_scores(windows: &[WindowScore]) -> Vec<FramePairScore> {
    let mut per_pair: BTreeMap<(usize, usize), Vec<&WindowScore>> = BTreeMap::new();
    for w in windows {
        per_pair.entry((w.left_track, w.right_track)).or_default().push(w);
    }
    let mut out = Vec::new();
    for ((l, r), ws) in per_pair {
        let lo = ws.iter().map(|w| w.start_frame).min().unwrap_or(0);
        let hi = ws.iter().map(|w| w.end_frame()).max().unwrap_or(0);
        for f in lo..=hi {
            let best = ws
                .iter()
                .filter(|w| w.start_frame <= f && f <= w.end_frame())
                .min_by_key(|w| (w.center_frame().abs_diff(f), w.center_frame()));
            if let Some(w) = best {
                out.push(FramePairScore {
                    left_track: l,
                    right_track: r,
                    frame: f,
                    score: w.score,
                });
            }
        }
    }
    out
}

/// Attaches the tracks' boxes to frame scores.
pub fn frame_scores_to_pairs(video_id: &str, scores: &[FramePairScore], tracks: &[HeadTrack]) -> Result<Vec<ScoredPair>> {
    let by_id: BTreeMap<usize, &HeadTrack> = tracks.iter().map(|t| (t.track_id, t)).collect();
    let lookup = |id: usize, f: usize| -> Result<BoundingBox> {
        by_id
            .get(&id)
            .and_then(|t| t.box_at(f))
            .copied()
            .ok_or_else(|| Error::InvalidValue(format!("track {id} has no box at frame {f}")))
    };
    scores
        .iter()
        .map(|s| {
            Ok(ScoredPair {
                video_id: video_id.to_string(),
                frame_index: s.frame,
                left_box: lookup(s.left_track, s.frame)?,
                right_box: lookup(s.right_track, s.frame)?,
                score: s.score,
            })
        })
        .collect()
}

/// Centered moving average; the window shrinks at the sequence ends.
pub fn smooth(seq: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..seq.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(seq.len() - 1);
            seq[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Maximum over pairs and frames of the length-5 smoothed per-pair scores.
pub fn shot_level_score(pair_sequences: &[Vec<f64>]) -> Result<f64> {
    pair_sequences
        .iter()
        .filter(|s| !s.is_empty())
        .flat_map(|s| smooth(s, SMOOTHING_WINDOW))
        .reduce(f64::max)
        .ok_or_else(|| Error::Empty("shot has no scored frames".into()))
}

/// Groups frame scores by track pair into frame-ordered sequences.
pub fn pair_sequences(scores: &[FramePairScore]) -> Vec<Vec<f64>> {
    let mut m: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for s in scores {
        m.entry((s.left_track, s.right_track)).or_default().push((s.frame, s.score));
    }
    m.into_values()
        .map(|mut v| {
            v.sort_by_key(|e| e.0);
            v.into_iter().map(|e| e.1).collect()
        })
        .collect()
}

/// AP summary written by the evaluation command. `ap` is absent exactly
/// when `no_positives` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub level: String,
    pub mode: MatchMode,
    pub ap: Option<f64>,
    pub no_positives: bool,
    pub num_predictions: usize,
    pub num_positives: usize,
    pub num_true_positives: usize,
    /// Where the precision/recall points were written.
    pub pr_curve: Option<String>,
}
