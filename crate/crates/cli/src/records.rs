//! Track and score files exchanged between commands.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::Result;
use laeo::eval::{FramePairScore, ScoredPair, WindowScore};
use laeo::{BoundingBox, HeadTrack};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub video_id: String,
    #[serde(flatten)]
    pub track: HeadTrack,
}

/// Tracks grouped by video, file order kept within a video.
pub fn tracks_by_video(records: Vec<TrackRecord>) -> BTreeMap<String, Vec<HeadTrack>> {
    let mut m: BTreeMap<String, Vec<HeadTrack>> = BTreeMap::new();
    for r in records {
        m.entry(r.video_id).or_default().push(r.track);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreRecord {
    Window {
        video_id: String,
        left_track: usize,
        right_track: usize,
        start_frame: usize,
        k: usize,
        score: f64,
    },
    Frame {
        video_id: String,
        frame: usize,
        left_track: usize,
        right_track: usize,
        left_box: BoundingBox,
        right_box: BoundingBox,
        score: f64,
    },
}

impl ScoreRecord {
    pub fn window(video_id: &str, w: &WindowScore) -> Self {
        Self::Window {
            video_id: video_id.to_string(),
            left_track: w.left_track,
            right_track: w.right_track,
            start_frame: w.start_frame,
            k: w.k,
            score: w.score,
        }
    }

    pub fn video_id(&self) -> &str {
        match self {
            Self::Window { video_id, .. } | Self::Frame { video_id, .. } => video_id,
        }
    }

    pub fn score(&self) -> f64 {
        match self {
            Self::Window { score, .. } | Self::Frame { score, .. } => *score,
        }
    }
}

/// Frame-level records as evaluation predictions.
pub fn scored_pairs(records: &[ScoreRecord]) -> Vec<ScoredPair> {
    records
        .iter()
        .filter_map(|r| match r {
            ScoreRecord::Frame {
                video_id,
                frame,
                left_box,
                right_box,
                score,
                ..
            } => Some(ScoredPair {
                video_id: video_id.clone(),
                frame_index: *frame,
                left_box: *left_box,
                right_box: *right_box,
                score: *score,
            }),
            ScoreRecord::Window { .. } => None,
        })
        .collect()
}

/// Frame-level records per video, keyed by track ids.
pub fn frame_scores_by_video(records: &[ScoreRecord]) -> BTreeMap<String, Vec<FramePairScore>> {
    let mut m: BTreeMap<String, Vec<FramePairScore>> = BTreeMap::new();
    for r in records {
        if let ScoreRecord::Frame {
            video_id,
            frame,
            left_track,
            right_track,
            score,
            ..
        } = r
        {
            m.entry(video_id.clone()).or_default().push(FramePairScore {
                left_track: *left_track,
                right_track: *right_track,
                frame: *frame,
                score: *score,
            });
        }
    }
    m
}

fn box_field(b: &BoundingBox) -> String {
    format!("{} {} {} {}", b.x1(), b.y1(), b.x2(), b.y2())
}

/// Frame-level scores as CSV; boxes are space-separated corners.
pub fn write_scores_csv(w: impl Write, records: &[ScoreRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["video_id", "frame", "left_box", "right_box", "score"])?;
    for p in scored_pairs(records) {
        out.write_record([
            p.video_id,
            p.frame_index.to_string(),
            box_field(&p.left_box),
            box_field(&p.right_box),
            p.score.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_record_round_trip() {
        let b = BoundingBox::new(1.0, 2.0, 3.0, 4.0).unwrap();
        let r = TrackRecord {
            video_id: "v".into(),
            track: HeadTrack {
                track_id: 3,
                start_frame: 5,
                boxes: vec![b, b],
                per_frame_scores: vec![0.5, 0.25],
                interpolated_mask: vec![false, true],
                detections: vec![Some(0), None],
            },
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.starts_with(r#"{"video_id":"v","track_id":3"#), "{s}");
        assert_eq!(serde_json::from_str::<TrackRecord>(&s).unwrap(), r);
    }

    #[test]
    fn score_record_round_trip_and_csv() {
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let recs = vec![
            ScoreRecord::Window {
                video_id: "v".into(),
                left_track: 0,
                right_track: 1,
                start_frame: 0,
                k: 10,
                score: 0.5,
            },
            ScoreRecord::Frame {
                video_id: "v".into(),
                frame: 4,
                left_track: 0,
                right_track: 1,
                left_box: b,
                right_box: b,
                score: 0.5,
            },
        ];
        for r in &recs {
            let s = serde_json::to_string(r).unwrap();
            assert_eq!(&serde_json::from_str::<ScoreRecord>(&s).unwrap(), r);
        }
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &recs).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "video_id,frame,left_box,right_box,score\nv,4,0 0 10 10,0 0 10 10,0.5\n"
        );
    }
}
