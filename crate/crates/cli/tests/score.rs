mod common;

use std::path::{Path, PathBuf};

use common::*;
use image::{Rgb, RgbImage};
use laeo::model::{LaeoNet, LaeoNetConfig};
use laeo_cli::frames::frame_path;
use laeo_cli::jsonl::read_jsonl;
use laeo_cli::records::ScoreRecord;

const FRAMES: usize = 14;

/// Two still heads over 14 frames of a 128x72 video, plus a third track
/// that only overlaps them for 9 frames (too short for one window).
fn fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let root = dir.join("frames");
    std::fs::create_dir_all(root.join("v")).unwrap();
    for f in 0..FRAMES {
        let mut img = RgbImage::from_pixel(128, 72, Rgb([40, 40, 40]));
        for (x0, c) in [(20u32, [200u8, 150, 120]), (80, [120, 150, 200])] {
            for y in 20..44 {
                for x in x0 + f as u32..x0 + f as u32 + 24 {
                    img.put_pixel(x.min(127), y, Rgb(c));
                }
            }
        }
        img.save(frame_path(&root, "v", f)).unwrap();
    }
    let tracks = [
        still_track(0, 0, FRAMES, bb(20.0, 20.0, 44.0, 44.0)),
        still_track(1, 0, FRAMES, bb(80.0, 20.0, 104.0, 44.0)),
        still_track(2, 5, 9, bb(50.0, 40.0, 70.0, 60.0)),
    ];
    let tracks = write_tracks(&dir.join("tracks.jsonl"), "v", &tracks);
    let ckpt = dir.join("model.ckpt");
    let net = LaeoNet::new(LaeoNetConfig::default(), 1).unwrap();
    net.save(std::fs::File::create(&ckpt).unwrap()).unwrap();
    (root, tracks, ckpt)
}

#[test]
fn scores_windows_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (root, tracks, ckpt) = fixture(dir.path());
    let out = dir.path().join("scores.jsonl");
    let args = ["score", "--tracks", s(&tracks), "--checkpoint", s(&ckpt), "--frames", s(&root), "-o", s(&out)];
    ok(&args);
    let recs: Vec<ScoreRecord> = read_jsonl(&out).unwrap();
    let windows: Vec<&ScoreRecord> = recs.iter().filter(|r| matches!(r, ScoreRecord::Window { .. })).collect();
    // only tracks 0 and 1 share K = 10 frames: starts 0..=4
    assert_eq!(windows.len(), FRAMES - 10 + 1);
    let frames: Vec<&ScoreRecord> = recs.iter().filter(|r| matches!(r, ScoreRecord::Frame { .. })).collect();
    assert_eq!(frames.len(), FRAMES);
    assert!(recs.iter().all(|r| (0.0..=1.0).contains(&r.score())));
    for r in &recs {
        let (ScoreRecord::Window { left_track, right_track, .. } | ScoreRecord::Frame { left_track, right_track, .. }) = r;
        assert_eq!((*left_track, *right_track), (0, 1));
    }
    let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("video_id,frame,left_box,right_box,score"));
    assert_eq!(lines.count(), FRAMES);

    let first = std::fs::read(&out).unwrap();
    ok(&args);
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn checkpoint_for_another_model_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (root, tracks, ckpt) = fixture(dir.path());
    let out = dir.path().join("scores.jsonl");
    let err = fails(&[
        "score",
        "--tracks",
        s(&tracks),
        "--checkpoint",
        s(&ckpt),
        "--frames",
        s(&root),
        "--override",
        "model.fusion_hidden_units=64",
        "-o",
        s(&out),
    ]);
    assert!(err.contains("digest"), "{err}");
    assert!(!out.exists());
}

#[test]
fn missing_frames_fail() {
    let dir = tempfile::tempdir().unwrap();
    let (_, tracks, ckpt) = fixture(dir.path());
    let empty = dir.path().join("nothing");
    let err = fails(&["score", "--tracks", s(&tracks), "--checkpoint", s(&ckpt), "--frames", s(&empty), "-o", "x.jsonl"]);
    assert!(err.contains("000000.png"), "{err}");
}

#[test]
fn crop_expansion_changes_the_crops() {
    let dir = tempfile::tempdir().unwrap();
    let (root, tracks, ckpt) = fixture(dir.path());
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["score", "--tracks", s(&tracks), "--checkpoint", s(&ckpt), "--frames", s(&root), "-o", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        read_jsonl::<ScoreRecord>(&out).unwrap().iter().map(|r| r.score()).collect::<Vec<_>>()
    };
    let tight = run("tight.jsonl", &[]);
    assert_eq!(run("unit.jsonl", &["--override", "score.crop_expansion=1.0"]), tight);
    assert_ne!(run("wide.jsonl", &["--override", "score.crop_expansion=1.5"]), tight);
    let err = fails(&["score", "--tracks", s(&tracks), "--checkpoint", s(&ckpt), "--frames", s(&root), "--override", "score.crop_expansion=0", "-o", "x.jsonl"]);
    assert!(err.contains("crop_expansion"), "{err}");
}
