//! End-to-end runs of the `c2f` binary.

use std::path::Path;
use std::process::{Command, Output};

fn c2f(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2f"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn c2f")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(out: &Path, seed: &str) -> Output {
    c2f(&[
        "synth",
        "--out",
        s(out),
        "--scenes",
        "2",
        "--per-scene",
        "6",
        "--test-per-scene",
        "2",
        "--image-size",
        "64",
        "--seed",
        seed,
    ])
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(synth(&a, "4").status.success());
    assert!(synth(&b, "4").status.success());
    let manifest = |d: &Path| std::fs::read_to_string(d.join("manifest.txt")).unwrap();
    let rel = |d: &Path| manifest(d).replace(s(d), "");
    assert_eq!(rel(&a), rel(&b));
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".png") {
            assert_eq!(
                std::fs::read(a.join(&name)).unwrap(),
                std::fs::read(b.join(&name)).unwrap()
            );
        }
    }
    assert!(a.join("synth.resolved.txt").exists());
}

#[test]
fn missing_required_flag_names_it() {
    let out = c2f(&["eval", "--manifest", "m.txt", "--centroids", "c.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(c2f(&["bench", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(c2f(&["no-such-subcommand"]).status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_snapshot_replays() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, "1").status.success());
    let cfg = dir.path().join("cluster.cfg");
    std::fs::write(&cfg, "kx=1\nkq=2\nseed=5\n").unwrap();
    let out = dir.path().join("cl");
    let manifest = data.join("manifest.txt");
    let run = c2f(&[
        "cluster",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--manifest",
        s(&manifest),
        "--kq",
        "1",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let snapshot = std::fs::read_to_string(out.join("cluster.resolved.txt")).unwrap();
    assert!(snapshot.contains("kx=1\n"));
    assert!(snapshot.contains("kq=1\n"));
    assert!(snapshot.contains("seed=5\n"));
    let first = std::fs::read_to_string(out.join("centroids.txt")).unwrap();

    // Replaying the snapshot reproduces the centroid file.
    std::fs::remove_file(out.join("centroids.txt")).unwrap();
    let replay = c2f(&["cluster", "--config", s(&out.join("cluster.resolved.txt"))]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(std::fs::read_to_string(out.join("centroids.txt")).unwrap(), first);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, "2").status.success());
    let manifest = data.join("manifest.txt");
    let centroids = dir.path().join("centroids.txt");
    let run = c2f(&[
        "cluster",
        "--out",
        s(&dir.path().join("cl")),
        "--manifest",
        s(&manifest),
        "--kx",
        "2",
        "--kq",
        "1",
        "--centroids",
        s(&centroids),
    ]);
    assert!(run.status.success());

    let model = [
        "--backbone",
        "tiny",
        "--token-dim",
        "16",
        "--layers",
        "1",
        "--heads",
        "2",
        "--mlp-dim",
        "16",
        "--head-hidden",
        "16",
    ];
    let train_dir = dir.path().join("train");
    let mut args = vec![
        "train",
        "--out",
        s(&train_dir),
        "--manifest",
        s(&manifest),
        "--centroids",
        s(&centroids),
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--checkpoint-every",
        "1",
    ];
    args.extend(model);
    let run = c2f(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in [
        "train.log",
        "train.resolved.txt",
        "epoch_0001.safetensors",
        "final.safetensors",
    ] {
        assert!(train_dir.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(train_dir.join("train.log")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 2 * 3);

    let checkpoint = train_dir.join("final.safetensors");
    let eval_dir = dir.path().join("eval");
    let run = c2f(&[
        "eval",
        "--out",
        s(&eval_dir),
        "--checkpoint",
        s(&checkpoint),
        "--manifest",
        s(&manifest),
        "--centroids",
        s(&centroids),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report =
        c2f_pose::harness::EvalReport::from_text(&std::fs::read_to_string(eval_dir.join("eval_report.txt")).unwrap())
            .unwrap();
    assert_eq!(report.scenes.len(), 2);
    assert!(report.scenes.iter().all(|r| r.samples == 2));

    let attend_dir = dir.path().join("attend");
    let run = c2f(&[
        "attend",
        "--out",
        s(&attend_dir),
        "--checkpoint",
        s(&checkpoint),
        "--manifest",
        s(&manifest),
        "--centroids",
        s(&centroids),
        "--limit",
        "2",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let pngs = std::fs::read_dir(&attend_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 2 * (2 + 2));
    assert!(attend_dir.join("ranking.txt").exists());

    let bench_dir = dir.path().join("bench");
    let mut args = vec![
        "bench",
        "--out",
        s(&bench_dir),
        "--scene-counts",
        "2,5",
        "--trials",
        "1",
        "--warmup",
        "0",
    ];
    args.extend(model);
    let run = c2f(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(bench_dir.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
