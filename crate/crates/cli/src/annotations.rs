//! Annotation records and the views built from them: detections per
//! frame, ground-truth pairs and shot boundaries.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::{bail, Result};
use laeo::eval::GroundTruthPair;
use laeo::{BoundingBox, HeadDetection, PairLabel, PoseAngles};
use serde::{Deserialize, Serialize};

/// One line of an annotation file. Boxes are `[x1, y1, x2, y2]` pixels,
/// poses `[yaw, pitch, roll]` radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnnotationRecord {
    HeadBox {
        video_id: String,
        frame: usize,
        id: String,
        #[serde(rename = "box")]
        bbox: BoundingBox,
    },
    BodyBox {
        video_id: String,
        frame: usize,
        id: String,
        #[serde(rename = "box")]
        bbox: BoundingBox,
    },
    PairLabel {
        video_id: String,
        frame: usize,
        a: String,
        b: String,
        label: PairLabel,
    },
    Pose {
        video_id: String,
        frame: usize,
        /// Box the pose belongs to.
        id: String,
        pose: [f64; 3],
    },
    /// First frame of a new shot.
    ShotBoundary { video_id: String, frame: usize },
    Detection {
        video_id: String,
        frame: usize,
        #[serde(rename = "box")]
        bbox: BoundingBox,
        score: f64,
    },
}

impl AnnotationRecord {
    pub fn video_id(&self) -> &str {
        match self {
            Self::HeadBox { video_id, .. }
            | Self::BodyBox { video_id, .. }
            | Self::PairLabel { video_id, .. }
            | Self::Pose { video_id, .. }
            | Self::ShotBoundary { video_id, .. }
            | Self::Detection { video_id, .. } => video_id,
        }
    }

    pub fn frame(&self) -> usize {
        match self {
            Self::HeadBox { frame, .. }
            | Self::BodyBox { frame, .. }
            | Self::PairLabel { frame, .. }
            | Self::Pose { frame, .. }
            | Self::ShotBoundary { frame, .. }
            | Self::Detection { frame, .. } => *frame,
        }
    }
}

type BoxKey<'a> = (&'a str, usize, &'a str);

fn boxes(records: &[AnnotationRecord]) -> Result<BTreeMap<BoxKey<'_>, BoundingBox>> {
    let mut m = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let AnnotationRecord::HeadBox { video_id, frame, id, bbox } | AnnotationRecord::BodyBox { video_id, frame, id, bbox } = r {
            if m.insert((video_id.as_str(), *frame, id.as_str()), *bbox).is_some() {
                bail!("record {}: box id {id:?} repeated in video {video_id:?} frame {frame}", i + 1);
            }
        }
    }
    Ok(m)
}

/// Box ids are unique per `(video_id, frame)`; labels and poses reference
/// existing boxes; scores and angles are in range.
pub fn validate(records: &[AnnotationRecord]) -> Result<()> {
    let b = boxes(records)?;
    for (i, r) in records.iter().enumerate() {
        match r {
            AnnotationRecord::PairLabel { video_id, frame, a, b: other, .. } => {
                for id in [a, other] {
                    if !b.contains_key(&(video_id.as_str(), *frame, id.as_str())) {
                        bail!("record {}: label references unknown box {id:?} in video {video_id:?} frame {frame}", i + 1);
                    }
                }
                if a == other {
                    bail!("record {}: label pairs box {a:?} with itself", i + 1);
                }
            }
            AnnotationRecord::Pose { video_id, frame, id, pose } => {
                if !b.contains_key(&(video_id.as_str(), *frame, id.as_str())) {
                    bail!("record {}: pose references unknown box {id:?} in video {video_id:?} frame {frame}", i + 1);
                }
                PoseAngles::new(pose[0], pose[1], pose[2])?;
            }
            AnnotationRecord::Detection { score, .. } if !(0.0..=1.0).contains(score) => {
                bail!("record {}: detection score {score} outside [0, 1]", i + 1);
            }
            _ => {}
        }
    }
    Ok(())
}

/// Detections of each video indexed by frame, from frame 0 to the last
/// frame with a detection.
pub fn detections_by_video(records: &[AnnotationRecord]) -> Result<BTreeMap<String, Vec<Vec<HeadDetection>>>> {
    let mut out: BTreeMap<String, Vec<Vec<HeadDetection>>> = BTreeMap::new();
    for r in records {
        if let AnnotationRecord::Detection { video_id, frame, bbox, score } = r {
            let frames = out.entry(video_id.clone()).or_default();
            if frames.len() <= *frame {
                frames.resize(frame + 1, Vec::new());
            }
            frames[*frame].push(HeadDetection::new(*frame, *bbox, *score)?);
        }
    }
    Ok(out)
}

/// Labeled box pairs in file order.
pub fn ground_truth(records: &[AnnotationRecord]) -> Result<Vec<GroundTruthPair>> {
    let b = boxes(records)?;
    let mut out = Vec::new();
    for r in records {
        if let AnnotationRecord::PairLabel { video_id, frame, a, b: other, label } = r {
            let get = |id: &str| {
                b.get(&(video_id.as_str(), *frame, id))
                    .copied()
                    .ok_or_else(|| anyhow::anyhow!("unknown box {id:?} in video {video_id:?} frame {frame}"))
            };
            out.push(GroundTruthPair {
                video_id: video_id.clone(),
                frame_index: *frame,
                box_a: get(a)?,
                box_b: get(other)?,
                label: *label,
            });
        }
    }
    Ok(out)
}

/// Start frames of every shot per video, always including frame 0.
pub fn shot_starts(records: &[AnnotationRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut m: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for r in records {
        let starts = m.entry(r.video_id().to_string()).or_default();
        starts.insert(0);
        if let AnnotationRecord::ShotBoundary { frame, .. } = r {
            starts.insert(*frame);
        }
    }
    m.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}

/// Index of the shot containing `frame` given sorted shot starts.
pub fn shot_of(starts: &[usize], frame: usize) -> usize {
    starts.partition_point(|&s| s <= frame).saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jsonl::parse_jsonl;

    const SAMPLE: &str = r#"{"kind":"head_box","video_id":"v","frame":3,"id":"h1","box":[0,0,10,10]}
{"kind":"head_box","video_id":"v","frame":3,"id":"h2","box":[20,0,30,10]}
{"kind":"pair_label","video_id":"v","frame":3,"a":"h1","b":"h2","label":"laeo"}
{"kind":"pose","video_id":"v","frame":3,"id":"h1","pose":[0.5,0.0,0.1]}
{"kind":"shot_boundary","video_id":"v","frame":2}
{"kind":"detection","video_id":"v","frame":1,"box":[0,0,10,10],"score":0.9}
{"kind":"body_box","video_id":"w","frame":0,"id":"b","box":[0,0,5,20]}
"#;

    #[test]
    fn schema_round_trip_is_identity() {
        let recs: Vec<AnnotationRecord> = parse_jsonl(SAMPLE.as_bytes(), "t").unwrap();
        assert_eq!(recs.len(), 7);
        validate(&recs).unwrap();
        let text: String = recs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        let back: Vec<AnnotationRecord> = parse_jsonl(text.as_bytes(), "t").unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn views() {
        let recs: Vec<AnnotationRecord> = parse_jsonl(SAMPLE.as_bytes(), "t").unwrap();
        let d = detections_by_video(&recs).unwrap();
        assert_eq!(d["v"].len(), 2);
        assert_eq!((d["v"][0].len(), d["v"][1].len()), (0, 1));
        let gt = ground_truth(&recs).unwrap();
        assert_eq!(gt.len(), 1);
        assert_eq!(gt[0].label, PairLabel::Laeo);
        let s = shot_starts(&recs);
        assert_eq!(s["v"], vec![0, 2]);
        assert_eq!(s["w"], vec![0]);
        assert_eq!([0, 1, 2, 9].map(|f| shot_of(&s["v"], f)), [0, 0, 1, 1]);
    }

    #[test]
    fn invariant_violations() {
        let dup = SAMPLE.replace("\"id\":\"h2\"", "\"id\":\"h1\"");
        let recs: Vec<AnnotationRecord> = parse_jsonl(dup.as_bytes(), "t").unwrap();
        assert!(validate(&recs).unwrap_err().to_string().contains("repeated"));
        let dangling = SAMPLE.replace("\"b\":\"h2\"", "\"b\":\"h9\"");
        let recs: Vec<AnnotationRecord> = parse_jsonl(dangling.as_bytes(), "t").unwrap();
        assert!(validate(&recs).unwrap_err().to_string().contains("h9"));
        let bad_kind = r#"{"kind":"mask","video_id":"v","frame":0}"#;
        assert!(parse_jsonl::<AnnotationRecord>(bad_kind.as_bytes(), "t").is_err());
        let extra = r#"{"kind":"shot_boundary","video_id":"v","frame":0,"x":1}"#;
        assert!(parse_jsonl::<AnnotationRecord>(extra.as_bytes(), "t").is_err());
    }
}
