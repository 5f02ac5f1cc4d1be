mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::*;
use laeo::model::{PoseNet, PoseNetConfig};
use laeo_cli::archive::read_archive;

const OVERFIT_ACC: f64 = 0.95;

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

const SMALL_SYNTH: [&str; 6] = [
    "--override",
    "heads.procedural_count=8",
    "--override",
    "synth.positives=3",
    "--override",
    "synth.negatives=3",
];

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["synth", "-o", s(&out), "--seed", seed];
        args.extend(SMALL_SYNTH);
        ok(&args);
        dir_contents(&out)
    };
    let a = run("a", "5");
    assert_eq!(a.len(), 1 + 6 * 3);
    assert_eq!(run("b", "5"), a);
    assert_ne!(run("c", "6"), a);
    let samples = read_archive(&dir.path().join("a")).unwrap();
    assert_eq!(samples.len(), 6);
    assert_eq!(samples.iter().filter(|s| s.label == laeo::PairLabel::Laeo).count(), 3);
}

#[test]
fn pretrain_writes_a_loadable_pose_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pose.ckpt");
    let stdout = ok(&[
        "pretrain",
        "-o",
        s(&out),
        "--override",
        "heads.procedural_count=5",
        "--override",
        "heads.validation_fraction=0.2",
        "--override",
        "pretrain.epochs=1",
    ]);
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    PoseNet::load(std::fs::File::open(&out).unwrap(), Some(&PoseNetConfig::default())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("pose.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().nth(1).unwrap().split(',').all(|f| !f.is_empty()));
}

#[test]
fn train_uses_and_fills_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "-o", s(&out), "--override", "train.epochs=1"];
        args.extend(SMALL_SYNTH);
        let o = std::process::Command::new(env!("CARGO_BIN_EXE_laeo"))
            .args(&args)
            .env("LAEO_CACHE_DIR", &cache)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(&out).unwrap()
    };
    let first = run("m1.ckpt");
    let cached: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert_eq!(cached.len(), 1);
    assert_eq!(run("m2.ckpt"), first);
}

#[test]
fn tiny_corpus_is_overfit() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("corpus");
    let corpus = [
        "--seed",
        "2024",
        "--override",
        "heads.procedural_count=24",
        "--override",
        "synth.positives=16",
        "--override",
        "synth.negatives=16",
    ];
    let mut args = vec!["synth", "-o", s(&archive)];
    args.extend(corpus);
    ok(&args);
    let real = format!("paths.train_archive={:?}", s(&archive));
    let synthetic = format!("paths.synthetic_archive={:?}", s(&archive));
    let out = dir.path().join("model.ckpt");
    let mut args = vec![
        "train",
        "-o",
        s(&out),
        "--override",
        &real,
        "--override",
        &synthetic,
        "--override",
        "train.epochs=200",
        "--override",
        "train.stop_at_train_acc=0.95",
    ];
    args.extend(corpus);
    let stdout = ok(&args);
    let last = stdout.lines().last().expect("one line per epoch");
    let acc: f64 = last.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(acc >= OVERFIT_ACC, "{last}");
}
