//! Online linking of per-frame head detections into head tracks.
//!
//! Tracks are extended greedily frame by frame: the highest scoring tracks
//! pick first, each taking the best scoring free detection that overlaps
//! its last box by at least the linking threshold. Short gaps are filled by
//! interpolation once the track is complete.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{iou, is_left_of, BoundingBox, HeadDetection, HeadTrack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkDirection {
    Forward,
    Backward,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkerConfig {
    /// Detections kept per frame.
    pub top_n: usize,
    /// Minimum IoU between a track's last box and the next detection.
    pub overlap_threshold: f64,
    /// Consecutive frames without a match after which a track stops.
    pub max_gap: usize,
    pub direction: LinkDirection,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        Self {
            top_n: 10,
            overlap_threshold: 0.3,
            max_gap: 5,
            direction: LinkDirection::Bidirectional,
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::InvalidValue("top_n must be >= 1".into()));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold < 1.0) {
            return Err(Error::InvalidValue(format!(
                "overlap_threshold must lie in (0, 1), got {}",
                self.overlap_threshold
            )));
        }
        if self.max_gap == 0 {
            return Err(Error::InvalidValue("max_gap must be >= 1".into()));
        }
        Ok(())
    }
}

fn detection_order(a: &HeadDetection, b: &HeadDetection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x1().total_cmp(&b.bbox.x1()))
        .then(a.bbox.y1().total_cmp(&b.bbox.y1()))
}

/// Keeps the `top_n` best scored detections of every frame, sorted by score
/// descending with ties broken by smaller `x1` (then smaller `y1`).
pub fn filter_top_n(frames: &[Vec<HeadDetection>], top_n: usize) -> Vec<Vec<HeadDetection>> {
    frames
        .iter()
        .map(|dets| {
            let mut dets = dets.clone();
            dets.sort_by(detection_order);
            dets.truncate(top_n);
            dets
        })
        .collect()
}

#[derive(Debug)]
struct OpenTrack {
    id: usize,
    start: usize,
    // (box, score, detection index) for matched frames
    frames: Vec<Option<(BoundingBox, f64, usize)>>,
    last_box: BoundingBox,
    misses: usize,
    score_sum: f64,
    matched: usize,
}

impl OpenTrack {
    fn mean_score(&self) -> f64 {
        self.score_sum / self.matched as f64
    }

    fn finish(mut self) -> HeadTrack {
        while matches!(self.frames.last(), Some(None)) {
            self.frames.pop();
        }
        let n = self.frames.len();
        let mut boxes = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        let mut dets = Vec::with_capacity(n);
        let mut prev: Option<usize> = None;
        for i in 0..n {
            match self.frames[i] {
                Some((b, s, d)) => {
                    boxes.push(b);
                    scores.push(s);
                    mask.push(false);
                    dets.push(Some(d));
                    prev = Some(i);
                }
                None => {
                    // Interior gap: the first frame is always matched and trailing
                    // misses were trimmed, so both neighbours exist.
                    let p = prev.expect("track starts with a match");
                    let q = (i + 1..n)
                        .find(|&j| self.frames[j].is_some())
                        .expect("trailing misses trimmed");
                    let (pb, ps, _) = self.frames[p].unwrap();
                    let (qb, qs, _) = self.frames[q].unwrap();
                    let t = (i - p) as f64 / (q - p) as f64;
                    boxes.push(pb.lerp(&qb, t));
                    scores.push(ps + (qs - ps) * t);
                    mask.push(true);
                    dets.push(None);
                }
            }
        }
        HeadTrack {
            track_id: self.id,
            start_frame: self.start,
            boxes,
            per_frame_scores: scores,
            interpolated_mask: mask,
            detections: dets,
        }
    }
}

/// Greedy forward linking over frames `0..frames.len()`. Detections are
/// referenced by their index within each frame's list.
pub fn link_tracks(frames: &[Vec<HeadDetection>], config: &LinkerConfig) -> Result<Vec<HeadTrack>> {
    config.validate()?;
    let mut open: Vec<OpenTrack> = Vec::new();
    let mut done: Vec<HeadTrack> = Vec::new();
    let mut next_id = 0;

    for (f, dets) in frames.iter().enumerate() {
        let mut claimed = vec![false; dets.len()];

        if f > 0 {
            open.sort_by(|a, b| b.mean_score().total_cmp(&a.mean_score()).then(a.id.cmp(&b.id)));
            let mut still_open = Vec::with_capacity(open.len());
            for mut track in open.drain(..) {
                let mut best: Option<usize> = None;
                for (j, det) in dets.iter().enumerate() {
                    if claimed[j] || iou(&track.last_box, &det.bbox) < config.overlap_threshold {
                        continue;
                    }
                    if best.map_or(true, |b| det.score > dets[b].score) {
                        best = Some(j);
                    }
                }
                match best {
                    Some(j) => {
                        claimed[j] = true;
                        let det = &dets[j];
                        track.frames.push(Some((det.bbox, det.score, j)));
                        track.last_box = det.bbox;
                        track.misses = 0;
                        track.score_sum += det.score;
                        track.matched += 1;
                        still_open.push(track);
                    }
                    None => {
                        track.frames.push(None);
                        track.misses += 1;
                        if track.misses >= config.max_gap {
                            done.push(track.finish());
                        } else {
                            still_open.push(track);
                        }
                    }
                }
            }
            open = still_open;
        }

        for (j, det) in dets.iter().enumerate() {
            if claimed[j] {
                continue;
            }
            open.push(OpenTrack {
                id: next_id,
                start: f,
                frames: vec![Some((det.bbox, det.score, j))],
                last_box: det.bbox,
                misses: 0,
                score_sum: det.score,
                matched: 1,
            });
            next_id += 1;
        }
    }
    done.extend(open.into_iter().map(OpenTrack::finish));
    done.sort_by_key(|t| t.track_id);
    Ok(done)
}

fn link_reversed(frames: &[Vec<HeadDetection>], config: &LinkerConfig) -> Result<Vec<HeadTrack>> {
    let n = frames.len();
    let reversed: Vec<_> = frames.iter().rev().cloned().collect();
    let tracks = link_tracks(&reversed, config)?;
    Ok(tracks
        .into_iter()
        .map(|mut t| {
            let end_rev = t.end_frame();
            t.start_frame = n - 1 - end_rev;
            t.boxes.reverse();
            t.per_frame_scores.reverse();
            t.interpolated_mask.reverse();
            t.detections.reverse();
            t
        })
        .collect())
}

fn mean_overlap(a: &HeadTrack, b: &HeadTrack) -> Option<f64> {
    let lo = a.start_frame.max(b.start_frame);
    let hi = a.end_frame().min(b.end_frame());
    if lo > hi {
        return None;
    }
    let sum: f64 = (lo..=hi)
        .map(|f| iou(a.box_at(f).unwrap(), b.box_at(f).unwrap()))
        .sum();
    Some(sum / (hi - lo + 1) as f64)
}

#[derive(Clone, Copy)]
struct FrameEntry {
    bbox: BoundingBox,
    score: f64,
    interpolated: bool,
    detection: Option<usize>,
}

fn entry(t: &HeadTrack, f: usize) -> FrameEntry {
    let i = f - t.start_frame;
    FrameEntry {
        bbox: t.boxes[i],
        score: t.per_frame_scores[i],
        interpolated: t.interpolated_mask[i],
        detection: t.detections[i],
    }
}

fn free(claimed: &HashSet<(usize, usize)>, f: usize, e: &FrameEntry) -> bool {
    e.detection.map_or(true, |d| !claimed.contains(&(f, d)))
}

fn assemble(id: usize, start: usize, mut entries: Vec<FrameEntry>) -> Option<HeadTrack> {
    let first = entries.iter().position(|e| !e.interpolated)?;
    let last = entries.iter().rposition(|e| !e.interpolated)?;
    entries.truncate(last + 1);
    entries.drain(..first);
    Some(HeadTrack {
        track_id: id,
        start_frame: start + first,
        boxes: entries.iter().map(|e| e.bbox).collect(),
        per_frame_scores: entries.iter().map(|e| e.score).collect(),
        interpolated_mask: entries.iter().map(|e| e.interpolated).collect(),
        detections: entries.iter().map(|e| e.detection).collect(),
    })
}

/// Links forwards and backwards in time and merges the two track sets.
///
/// A forward and a backward track are merged when their boxes have mean IoU
/// of at least the linking threshold over their common frames (best pairs
/// first, one-to-one). Common frames get corner-averaged boxes; frames only
/// covered by the backward track extend the forward one. Backward
/// contributions never re-claim a detection already owned by an output track:
/// extensions stop at the first conflicting frame and unmerged backward
/// tracks keep their longest conflict-free run.
pub fn link_bidirectional(frames: &[Vec<HeadDetection>], config: &LinkerConfig) -> Result<Vec<HeadTrack>> {
    match config.direction {
        LinkDirection::Forward => return link_tracks(frames, config),
        LinkDirection::Backward => {
            let mut tracks = link_reversed(frames, config)?;
            tracks.sort_by_key(|t| (t.start_frame, t.track_id));
            for (i, t) in tracks.iter_mut().enumerate() {
                t.track_id = i;
            }
            return Ok(tracks);
        }
        LinkDirection::Bidirectional => {}
    }
    let forward = link_tracks(frames, config)?;
    let backward = link_reversed(frames, config)?;

    let mut candidates = Vec::new();
    for (i, a) in forward.iter().enumerate() {
        for (j, b) in backward.iter().enumerate() {
            if let Some(m) = mean_overlap(a, b) {
                if m >= config.overlap_threshold {
                    candidates.push((m, i, j));
                }
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut partner_of_fwd: Vec<Option<usize>> = vec![None; forward.len()];
    let mut bwd_taken = vec![false; backward.len()];
    for (_, i, j) in candidates {
        if partner_of_fwd[i].is_none() && !bwd_taken[j] {
            partner_of_fwd[i] = Some(j);
            bwd_taken[j] = true;
        }
    }

    let mut claimed: HashSet<(usize, usize)> = HashSet::new();
    for t in &forward {
        for (k, d) in t.detections.iter().enumerate() {
            if let Some(d) = d {
                claimed.insert((t.start_frame + k, *d));
            }
        }
    }

    let mut out = Vec::new();
    for (i, a) in forward.iter().enumerate() {
        let Some(j) = partner_of_fwd[i] else {
            out.push(a.clone());
            continue;
        };
        let b = &backward[j];
        let mut core: Vec<FrameEntry> = Vec::with_capacity(a.len());
        for f in a.start_frame..=a.end_frame() {
            let ea = entry(a, f);
            if !b.covers(f) {
                core.push(ea);
                continue;
            }
            let eb = entry(b, f);
            let c = ea.bbox.corners();
            let d = eb.bbox.corners();
            let avg = BoundingBox::new(
                0.5 * (c[0] + d[0]),
                0.5 * (c[1] + d[1]),
                0.5 * (c[2] + d[2]),
                0.5 * (c[3] + d[3]),
            )?;
            let mut detection = ea.detection;
            if detection.is_none() && eb.detection.is_some() && free(&claimed, f, &eb) {
                detection = eb.detection;
                claimed.insert((f, eb.detection.unwrap()));
            }
            core.push(FrameEntry {
                bbox: avg,
                score: 0.5 * (ea.score + eb.score),
                interpolated: ea.interpolated && eb.interpolated,
                detection,
            });
        }
        let mut prefix = Vec::new();
        let mut f = a.start_frame;
        while f > b.start_frame {
            f -= 1;
            let e = entry(b, f);
            if !free(&claimed, f, &e) {
                break;
            }
            prefix.push(e);
        }
        let mut suffix = Vec::new();
        let mut f = a.end_frame();
        while f < b.end_frame() {
            f += 1;
            let e = entry(b, f);
            if !free(&claimed, f, &e) {
                break;
            }
            suffix.push(e);
        }
        let start = a.start_frame - prefix.len();
        prefix.reverse();
        let entries: Vec<FrameEntry> = prefix.into_iter().chain(core).chain(suffix).collect();
        let merged = assemble(a.track_id, start, entries).expect("forward track has detections");
        for (k, d) in merged.detections.iter().enumerate() {
            if let Some(d) = d {
                claimed.insert((merged.start_frame + k, *d));
            }
        }
        out.push(merged);
    }

    for (j, b) in backward.iter().enumerate() {
        if bwd_taken[j] {
            continue;
        }
        // longest run of frames whose detections are still free
        let mut best = (0usize, 0usize);
        let mut run_start = 0;
        for k in 0..=b.len() {
            let ok = k < b.len() && free(&claimed, b.start_frame + k, &entry(b, b.start_frame + k));
            if !ok {
                if k - run_start > best.1 - best.0 {
                    best = (run_start, k);
                }
                run_start = k + 1;
            }
        }
        if best.1 == best.0 {
            continue;
        }
        let entries: Vec<FrameEntry> = (best.0..best.1)
            .map(|k| entry(b, b.start_frame + k))
            .collect();
        if let Some(t) = assemble(0, b.start_frame + best.0, entries) {
            for (k, d) in t.detections.iter().enumerate() {
                if let Some(d) = d {
                    claimed.insert((t.start_frame + k, *d));
                }
            }
            out.push(t);
        }
    }
    for (i, t) in out.iter_mut().enumerate() {
        t.track_id = i;
    }
    Ok(out)
}

/// A window of `k` consecutive frames in which two tracks coexist; the
/// sample it yields is positioned at `center_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairWindow {
    pub left_track: usize,
    pub right_track: usize,
    pub start_frame: usize,
    pub center_frame: usize,
    pub k: usize,
}

impl PairWindow {
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.k - 1
    }
}

/// Central frame offset within a window of `k` frames.
pub fn center_offset(k: usize) -> usize {
    k / 2
}

/// Enumerates every window of `k` frames (advancing by `stride`) shared by
/// each unordered track pair. Left/right follows the central-frame centers.
pub fn extract_pair_windows(tracks: &[HeadTrack], k: usize, stride: usize) -> Result<Vec<PairWindow>> {
    if k == 0 || stride == 0 {
        return Err(Error::InvalidValue("window length and stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    for (i, a) in tracks.iter().enumerate() {
        for b in &tracks[i + 1..] {
            let lo = a.start_frame.max(b.start_frame);
            let hi = a.end_frame().min(b.end_frame());
            if lo > hi || hi - lo + 1 < k {
                continue;
            }
            let mut s = lo;
            while s + k - 1 <= hi {
                let center = s + center_offset(k);
                let (l, r) = if is_left_of(a.box_at(center).unwrap(), b.box_at(center).unwrap()) {
                    (a, b)
                } else {
                    (b, a)
                };
                out.push(PairWindow {
                    left_track: l.track_id,
                    right_track: r.track_id,
                    start_frame: s,
                    center_frame: center,
                    k,
                });
                s += stride;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(f: usize, x: f64, y: f64, score: f64) -> HeadDetection {
        HeadDetection::new(f, BoundingBox::new(x, y, x + 10.0, y + 10.0).unwrap(), score).unwrap()
    }

    fn cfg() -> LinkerConfig {
        LinkerConfig::default()
    }

    #[test]
    fn top_n_keeps_best() {
        let frame: Vec<_> = (0..3).map(|i| det(0, i as f64 * 20.0, 0.0, 0.5)).collect();
        assert_eq!(filter_top_n(&[frame.clone()], 10)[0].len(), 3);

        let frame: Vec<_> = (0..12).map(|i| det(0, i as f64 * 20.0, 0.0, i as f64 / 20.0)).collect();
        let kept = &filter_top_n(&[frame], 10)[0];
        assert_eq!(kept.len(), 10);
        assert!(kept.iter().all(|d| d.score >= 2.0 / 20.0));
        assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn top_n_ties_prefer_smaller_x1() {
        let frame = vec![det(0, 50.0, 0.0, 0.7), det(0, 10.0, 0.0, 0.7), det(0, 30.0, 0.0, 0.7)];
        let kept = &filter_top_n(&[frame], 2)[0];
        assert_eq!(kept[0].bbox.x1(), 10.0);
        assert_eq!(kept[1].bbox.x1(), 30.0);
    }

    #[test]
    fn single_chain_is_one_track() {
        let frames: Vec<_> = (0..8).map(|f| vec![det(f, f as f64, 0.0, 0.9)]).collect();
        let tracks = link_tracks(&frames, &cfg()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 8);
        assert!(tracks[0].interpolated_mask.iter().all(|m| !m));
    }

    #[test]
    fn disjoint_chains_give_two_tracks() {
        let frames: Vec<_> = (0..6)
            .map(|f| vec![det(f, 0.0, 0.0, 0.9), det(f, 200.0, 0.0, 0.8)])
            .collect();
        let tracks = link_tracks(&frames, &cfg()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.len() == 6));
    }

    #[test]
    fn short_gap_is_interpolated_long_gap_splits() {
        let mut frames: Vec<Vec<HeadDetection>> = (0..6).map(|f| vec![det(f, f as f64, 0.0, 0.9)]).collect();
        frames[2].clear();
        frames[3].clear();
        let c = LinkerConfig { max_gap: 3, ..cfg() };
        let tracks = link_tracks(&frames, &c).unwrap();
        assert_eq!(tracks.len(), 1);
        let t = &tracks[0];
        assert_eq!(t.interpolated_mask, vec![false, false, true, true, false, false]);
        // linear between x=1 (frame 1) and x=4 (frame 4)
        assert!((t.boxes[2].x1() - 2.0).abs() < 1e-12);
        assert!((t.boxes[3].x1() - 3.0).abs() < 1e-12);

        let c = LinkerConfig { max_gap: 2, ..cfg() };
        let tracks = link_tracks(&frames, &c).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].len(), 2);
        assert_eq!(tracks[1].start_frame, 4);
    }

    #[test]
    fn higher_scoring_track_picks_first() {
        // Two tracks compete for one detection in frame 1.
        let frames = vec![
            vec![det(0, 0.0, 0.0, 0.6), det(0, 4.0, 0.0, 0.9)],
            vec![det(1, 2.0, 0.0, 0.8)],
        ];
        let tracks = link_tracks(&frames, &LinkerConfig { max_gap: 1, ..cfg() }).unwrap();
        let winner = tracks.iter().find(|t| t.len() == 2).unwrap();
        assert_eq!(winner.boxes[0].x1(), 4.0);
    }

    #[test]
    fn empty_input() {
        assert!(link_tracks(&[], &cfg()).unwrap().is_empty());
        assert!(link_bidirectional(&[], &cfg()).unwrap().is_empty());
        assert!(link_tracks(&[vec![], vec![]], &cfg()).unwrap().is_empty());
    }

    #[test]
    fn static_head_merges_into_one() {
        let frames: Vec<_> = (0..5).map(|f| vec![det(f, 10.0, 10.0, 0.8)]).collect();
        let tracks = link_bidirectional(&frames, &cfg()).unwrap();
        assert_eq!(tracks.len(), 1);
        let fwd = link_tracks(&frames, &cfg()).unwrap();
        assert_eq!(tracks[0].boxes, fwd[0].boxes);
    }

    #[test]
    fn drift_is_averaged() {
        // Forward, the head at x=8 ends on x=4 in frame 2; backward it is
        // traced from x=8. The merged track averages the two in frame 2.
        let frames = vec![
            vec![det(0, 8.0, 0.0, 0.6), det(0, 0.0, 0.0, 0.4), det(0, 6.0, 0.0, 0.3)],
            vec![det(1, 4.0, 0.0, 0.3), det(1, 2.0, 0.0, 0.4), det(1, 6.0, 0.0, 0.2)],
            vec![det(2, 4.0, 0.0, 0.7), det(2, 8.0, 0.0, 0.4)],
        ];
        let c = LinkerConfig { max_gap: 1, ..cfg() };
        let xs = |t: &HeadTrack| t.boxes.iter().map(|b| b.x1()).collect::<Vec<_>>();
        let fwd = link_tracks(&frames, &c).unwrap();
        let bwd = link_reversed(&frames, &c).unwrap();
        assert!(fwd.iter().any(|t| xs(t) == [8.0, 4.0, 4.0]));
        assert!(bwd.iter().any(|t| xs(t) == [8.0, 4.0, 8.0]));
        let merged = link_bidirectional(&frames, &c).unwrap();
        let t = merged.iter().find(|t| t.boxes[0].x1() == 8.0).unwrap();
        assert_eq!(xs(t), [8.0, 4.0, 6.0]);
        assert_eq!(t.boxes[2].x2(), 16.0);
        assert_eq!(merged.len(), 3);
    }

    #[test]
    fn window_counts() {
        let track = |id: usize, start: usize, len: usize, x: f64| HeadTrack {
            track_id: id,
            start_frame: start,
            boxes: vec![BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap(); len],
            per_frame_scores: vec![1.0; len],
            interpolated_mask: vec![false; len],
            detections: vec![Some(0); len],
        };
        let a = track(0, 0, 10, 100.0);
        let b = track(1, 0, 10, 0.0);
        let w = extract_pair_windows(&[a.clone(), b.clone()], 10, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].left_track, w[0].right_track), (1, 0));
        assert_eq!(w[0].center_frame, 5);

        let a = track(0, 3, 14, 100.0);
        let b = track(1, 0, 15, 0.0); // shared frames 3..=14 -> 12 frames
        assert_eq!(extract_pair_windows(&[a, b], 10, 1).unwrap().len(), 3);

        let a = track(0, 0, 5, 100.0);
        let b = track(1, 5, 5, 0.0);
        assert!(extract_pair_windows(&[a, b], 1, 1).unwrap().is_empty());
    }
}
