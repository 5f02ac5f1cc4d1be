#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use laeo::{BoundingBox, HeadTrack};
use laeo_cli::records::TrackRecord;

pub fn laeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laeo"))
        .args(args)
        .env_remove("LAEO_CACHE_DIR")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

/// Runs the binary and returns stdout, failing the test on a nonzero exit.
pub fn ok(args: &[&str]) -> String {
    let out = laeo(args);
    assert!(
        out.status.success(),
        "laeo {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs the binary expecting failure and returns stderr.
pub fn fails(args: &[&str]) -> String {
    let out = laeo(args);
    assert!(!out.status.success(), "laeo {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

/// A track holding the same box over `len` frames.
pub fn still_track(id: usize, start: usize, len: usize, b: BoundingBox) -> HeadTrack {
    HeadTrack {
        track_id: id,
        start_frame: start,
        boxes: vec![b; len],
        per_frame_scores: vec![0.9; len],
        interpolated_mask: vec![false; len],
        detections: vec![Some(0); len],
    }
}

pub fn write_tracks(path: &Path, video: &str, tracks: &[HeadTrack]) -> PathBuf {
    let text: String = tracks
        .iter()
        .map(|t| {
            let r = TrackRecord {
                video_id: video.into(),
                track: t.clone(),
            };
            serde_json::to_string(&r).unwrap() + "\n"
        })
        .collect();
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

pub fn write_lines(path: &Path, lines: &[String]) -> PathBuf {
    std::fs::write(path, lines.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    path.to_path_buf()
}
