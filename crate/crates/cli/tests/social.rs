mod common;

use common::*;
use laeo::social::SocialGraph;
use laeo_cli::records::ScoreRecord;

fn frame_score(video: &str, frame: usize, l: usize, r: usize, score: f64) -> String {
    let b = bb(0.0, 0.0, 10.0, 10.0);
    serde_json::to_string(&ScoreRecord::Frame {
        video_id: video.into(),
        frame,
        left_track: l,
        right_track: r,
        left_box: b,
        right_box: b,
        score,
    })
    .unwrap()
}

#[test]
fn worked_fixture_gives_ratio_point_four() {
    let dir = tempfile::tempdir().unwrap();
    let b = bb(0.0, 0.0, 10.0, 10.0);
    let tracks = write_tracks(&dir.path().join("tracks.jsonl"), "ep1", &[still_track(0, 0, 10, b), still_track(1, 0, 10, b)]);
    // four frames above the threshold out of ten
    let lines: Vec<String> = (0..10)
        .map(|f| frame_score("ep1", f, 0, 1, if f < 4 { 0.9 } else { 0.1 }))
        .collect();
    let scores = write_lines(&dir.path().join("scores.jsonl"), &lines);
    let labels = write_lines(&dir.path().join("labels.csv"), &["track_id,name".into(), "0,ross".into(), "1,rachel".into()]);
    let out = dir.path().join("graph.json");
    let stdout = ok(&["social", "--tracks", s(&tracks), "--scores", s(&scores), "--labels", s(&labels), "-o", s(&out)]);
    assert!(stdout.contains("rachel - ross"), "{stdout}");
    let g: SocialGraph = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(g.nodes, vec!["rachel".to_string(), "ross".to_string()]);
    assert_eq!(g.edges.len(), 1);
    let e = &g.edges[0];
    assert!((e.ratio - 0.4).abs() < 1e-12);
    assert!((e.weight - 0.42).abs() < 1e-12);
    assert_eq!((e.frames, e.laeo_frames), (10, 4));
    let svg = std::fs::read_to_string(dir.path().join("graph.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn videos_are_pooled_and_dropped_tracks_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let b = bb(0.0, 0.0, 10.0, 10.0);
    let path = dir.path().join("tracks.jsonl");
    write_tracks(&path, "a", &[still_track(0, 0, 4, b), still_track(1, 0, 4, b), still_track(2, 0, 4, b)]);
    let mut text = std::fs::read_to_string(&path).unwrap();
    write_tracks(&path, "b", &[still_track(0, 0, 6, b), still_track(1, 0, 6, b)]);
    text.push_str(&std::fs::read_to_string(&path).unwrap());
    std::fs::write(&path, text).unwrap();
    let mut lines: Vec<String> = (0..4).map(|f| frame_score("a", f, 0, 1, 1.0)).collect();
    lines.extend((0..4).map(|f| frame_score("a", f, 0, 2, 1.0)));
    lines.extend((0..6).map(|f| frame_score("b", f, 1, 0, 0.0)));
    let scores = write_lines(&dir.path().join("scores.jsonl"), &lines);
    let labels = write_lines(
        &dir.path().join("labels.csv"),
        &[
            "video_id,track_id,name".into(),
            "a,0,x".into(),
            "a,1,y".into(),
            "a,2,WRONG".into(),
            "b,0,y".into(),
            "b,1,x".into(),
        ],
    );
    let out = dir.path().join("graph.json");
    ok(&["social", "--tracks", s(&path), "--scores", s(&scores), "--labels", s(&labels), "-o", s(&out)]);
    let g: SocialGraph = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(g.edges.len(), 1);
    let e = &g.edges[0];
    assert_eq!((e.a.as_str(), e.b.as_str(), e.frames, e.laeo_frames), ("x", "y", 10, 4));
    assert!((e.weight - 0.4).abs() < 1e-12);
}

#[test]
fn head_map_png_marks_both_heads() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = write_tracks(
        &dir.path().join("tracks.jsonl"),
        "v",
        &[
            still_track(0, 0, 3, bb(0.0, 0.0, 20.0, 20.0)),
            still_track(1, 0, 3, bb(180.0, 80.0, 200.0, 100.0)),
        ],
    );
    let out = dir.path().join("map.png");
    let args = ["render-headmap", "--tracks", s(&tracks), "--video", "v", "--frame", "1", "--left", "0", "--right", "1"];
    let mut with_size = args.to_vec();
    with_size.extend(["--frame-size", "200x100", "-o", s(&out)]);
    ok(&with_size);
    let img = image::open(&out).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (64, 64));
    // left head (blue) centered at map (3.2, 6.4), right (green) at (60.8, 57.6)
    assert!(img.get_pixel(3, 6)[2] > 200 && img.get_pixel(3, 6)[1] < 50);
    assert!(img.get_pixel(61, 58)[1] > 200 && img.get_pixel(61, 58)[2] < 50);
    assert!(img.pixels().all(|p| p[0] == 0));

    let mut bad = args.to_vec();
    bad[10] = "7";
    bad.extend(["--frame-size", "200x100", "-o", s(&out)]);
    let err = fails(&bad);
    assert!(err.contains("track 7"), "{err}");
}
