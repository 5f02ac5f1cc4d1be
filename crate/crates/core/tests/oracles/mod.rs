//! Reference implementations used to check the library against. They are
//! written for clarity, not speed, and share no code with the crate.

#![allow(dead_code)]

use laeo::{BoundingBox, HeadDetection, HeadTrack};

/// Parameters of a conv layer given as `(filters, kernel volume, in channels)`.
pub fn conv_params(filters: usize, kernel: [usize; 3], cin: usize) -> usize {
    kernel.iter().product::<usize>() * cin * filters + filters
}

pub fn dense_params(inputs: usize, outputs: usize) -> usize {
    inputs * outputs + outputs
}

/// Parameter count of the network with default layers, worked out layer by
/// layer from the architecture table.
pub fn default_param_count() -> usize {
    let head_pose = conv_params(16, [5, 5, 3], 3)
        + conv_params(24, [3, 3, 3], 16)
        + conv_params(32, [3, 3, 3], 24)
        + conv_params(12, [6, 6, 1], 32);
    let head_map = conv_params(8, [5, 5, 1], 3)
        + conv_params(16, [3, 3, 1], 8)
        + conv_params(24, [3, 3, 1], 16)
        + conv_params(16, [3, 3, 1], 24);
    // 12 filters over a 3x3 map, K=10 frames; 16 filters over 2x2
    let d_hp = 12 * 3 * 3 * 10;
    let d_hm = 16 * 2 * 2;
    let fusion = dense_params(2 * d_hp + d_hm, 128) + dense_params(128, 2);
    head_pose + head_map + fusion
}

/// AP from the precision and recall at every distinct score threshold,
/// each recomputed from scratch over the predictions at or above it.
pub fn threshold_sweep_ap(items: &[(f64, bool)], num_positives: usize) -> f64 {
    let mut thresholds: Vec<f64> = items.iter().map(|i| i.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for t in thresholds {
        let above: Vec<&(f64, bool)> = items.iter().filter(|i| i.0 >= t).collect();
        let hits = above.iter().filter(|i| i.1).count() as f64;
        let recall = hits / num_positives as f64;
        let precision = hits / above.len() as f64;
        ap += (recall - last_recall) * precision;
        last_recall = recall;
    }
    ap
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2().min(b.x2()) - a.x1().max(b.x1());
    let ih = a.y2().min(b.y2()) - a.y1().max(b.y1());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.width() * a.height() + b.width() * b.height() - inter)
}

struct Open {
    id: usize,
    start: usize,
    frames: Vec<Option<(BoundingBox, f64, usize)>>,
    misses: usize,
}

impl Open {
    fn last(&self) -> BoundingBox {
        self.frames.iter().rev().find_map(|e| e.map(|x| x.0)).unwrap()
    }

    fn mean(&self) -> f64 {
        let s: Vec<f64> = self.frames.iter().filter_map(|e| e.map(|x| x.1)).collect();
        s.iter().sum::<f64>() / s.len() as f64
    }

    fn close(mut self) -> HeadTrack {
        while self.frames.last().unwrap().is_none() {
            self.frames.pop();
        }
        let n = self.frames.len();
        let mut t = HeadTrack {
            track_id: self.id,
            start_frame: self.start,
            boxes: vec![],
            per_frame_scores: vec![],
            interpolated_mask: vec![],
            detections: vec![],
        };
        for i in 0..n {
            if let Some((b, s, d)) = self.frames[i] {
                t.boxes.push(b);
                t.per_frame_scores.push(s);
                t.interpolated_mask.push(false);
                t.detections.push(Some(d));
                continue;
            }
            let p = (0..i).rev().find(|&j| self.frames[j].is_some()).unwrap();
            let q = (i + 1..n).find(|&j| self.frames[j].is_some()).unwrap();
            let (pb, ps, _) = self.frames[p].unwrap();
            let (qb, qs, _) = self.frames[q].unwrap();
            let w = (i - p) as f64 / (q - p) as f64;
            let lerp = |a: f64, b: f64| a + (b - a) * w;
            t.boxes.push(
                BoundingBox::new(lerp(pb.x1(), qb.x1()), lerp(pb.y1(), qb.y1()), lerp(pb.x2(), qb.x2()), lerp(pb.y2(), qb.y2()))
                    .unwrap(),
            );
            t.per_frame_scores.push(lerp(ps, qs));
            t.interpolated_mask.push(true);
            t.detections.push(None);
        }
        t
    }
}

/// Every way of giving each track (in priority order) either nothing or a
/// distinct eligible detection.
fn assignments(eligible: &[Vec<usize>], k: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
    if k == eligible.len() {
        out.push(cur.clone());
        return;
    }
    cur.push(None);
    assignments(eligible, k + 1, used, cur, out);
    cur.pop();
    for &j in &eligible[k] {
        if !used[j] {
            used[j] = true;
            cur.push(Some(j));
            assignments(eligible, k + 1, used, cur, out);
            cur.pop();
            used[j] = false;
        }
    }
}

/// Greedy linking by exhaustive search: among all legal assignments of
/// each frame, keep the one that is best for the highest-priority track,
/// then the next, and so on. A track prefers any detection to none, a
/// higher score to a lower one, and a lower index on equal scores.
pub fn greedy_link_oracle(frames: &[Vec<HeadDetection>], threshold: f64, max_gap: usize) -> Vec<HeadTrack> {
    let mut open: Vec<Open> = vec![];
    let mut closed: Vec<HeadTrack> = vec![];
    let mut next_id = 0;
    for (f, dets) in frames.iter().enumerate() {
        let mut taken = vec![false; dets.len()];
        if f > 0 {
            open.sort_by(|a, b| b.mean().partial_cmp(&a.mean()).unwrap().then(a.id.cmp(&b.id)));
            let eligible: Vec<Vec<usize>> = open
                .iter()
                .map(|t| (0..dets.len()).filter(|&j| overlap(&t.last(), &dets[j].bbox) >= threshold).collect())
                .collect();
            let mut all = vec![];
            assignments(&eligible, 0, &mut vec![false; dets.len()], &mut vec![], &mut all);
            let key = |a: &Vec<Option<usize>>| -> Vec<(u8, f64, i64)> {
                a.iter()
                    .map(|x| match x {
                        Some(j) => (1, dets[*j].score, -(*j as i64)),
                        None => (0, 0.0, 0),
                    })
                    .collect()
            };
            let best = all
                .into_iter()
                .max_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
                .unwrap();
            let mut keep = vec![];
            for (mut t, pick) in open.drain(..).zip(best) {
                match pick {
                    Some(j) => {
                        taken[j] = true;
                        t.frames.push(Some((dets[j].bbox, dets[j].score, j)));
                        t.misses = 0;
                        keep.push(t);
                    }
                    None => {
                        t.frames.push(None);
                        t.misses += 1;
                        if t.misses >= max_gap {
                            closed.push(t.close());
                        } else {
                            keep.push(t);
                        }
                    }
                }
            }
            open = keep;
        }
        for (j, d) in dets.iter().enumerate() {
            if !taken[j] {
                open.push(Open {
                    id: next_id,
                    start: f,
                    frames: vec![Some((d.bbox, d.score, j))],
                    misses: 0,
                });
                next_id += 1;
            }
        }
    }
    closed.extend(open.into_iter().map(Open::close));
    closed.sort_by_key(|t| t.track_id);
    closed
}

/// Centered moving average with a window that shrinks at the ends.
pub fn smoothed(seq: &[f64], window: usize) -> Vec<f64> {
    let r = window / 2;
    (0..seq.len())
        .map(|i| {
            let w: Vec<f64> = seq.iter().enumerate().filter(|(j, _)| j.abs_diff(i) <= r).map(|(_, v)| *v).collect();
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}
