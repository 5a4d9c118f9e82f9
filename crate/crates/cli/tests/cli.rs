use std::path::Path;
use std::process::{Command, Output};

use bdrseg_core::imgio::{read_mask, Manifest};
use bdrseg_core::metrics::{dice, EvalReport};

fn bdrseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdrseg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bdrseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_bad_flags() {
    assert!(bdrseg(&["--help"]).status.success());
    for sub in ["gen", "distmap", "train", "segment", "eval"] {
        assert!(bdrseg(&[sub, "--help"]).status.success(), "{sub}");
    }
    assert!(!bdrseg(&["gen", "--no-such-flag"]).status.success());
    assert!(!bdrseg(&["frobnicate"]).status.success());
}

#[test]
fn gen_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["gen", "--out", s(&out), "--n-train", "3", "--n-test", "2", "--size", "32", "--seed", seed]);
        std::fs::read(out.join("images/s0001.pgm")).unwrap()
    };
    assert_eq!(run("a", "5"), run("b", "5"));
    assert_ne!(run("a", "5"), run("c", "6"));
    let m = Manifest::load(&dir.path().join("a")).unwrap();
    assert_eq!(m.records.len(), 5);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--out", s(&data), "--n-train", "2", "--n-test", "3", "--size", "48", "--seed", "1"]);
    let report = dir.path().join("r.txt");
    ok(&["eval", "--pred", s(&data), "--gt", s(&data), "--report", s(&report)]);
    let r = EvalReport::load(&report).unwrap();
    assert_eq!(r.dice.mean, 1.0);
    assert_eq!(r.mean_distance.mean, 0.0);
    assert_eq!(r.accuracy.mean, 1.0);
}

#[test]
fn brn_on_ground_truth_map_recovers_mask() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--out", s(&data), "--n-train", "0", "--n-test", "4", "--size", "64", "--seed", "3"]);
    for rec in &Manifest::load(&data).unwrap().records {
        let out = dir.path().join(format!("{}.pgm", rec.id));
        ok(&["segment", "--mode", "brn", "--dmap", s(&data.join(&rec.dmap_path)), "--out", s(&out)]);
        let d = dice(&read_mask(&out).unwrap(), &read_mask(&data.join(&rec.mask_path)).unwrap()).unwrap();
        assert!(d >= 0.98, "{}: {d}", rec.id);
    }
}

#[test]
fn distmap_matches_generated_map() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--out", s(&data), "--n-train", "1", "--n-test", "0", "--size", "32", "--seed", "2"]);
    let rec = &Manifest::load(&data).unwrap().records[0];
    let out = dir.path().join("m.fmap");
    ok(&["distmap", "--mask", s(&data.join(&rec.mask_path)), "--out", s(&out)]);
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(data.join(&rec.dmap_path)).unwrap());
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--out", s(&data), "--n-train", "1", "--n-test", "1", "--size", "32", "--seed", "2"]);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[schedule]\nlambda_start = 0.1\nlambda_end = 0.9\nbogus = 1\n").unwrap();
    let out = bdrseg(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("m.bseg"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_image_segmentation_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--out", s(&data), "--n-train", "4", "--n-test", "1", "--size", "32", "--seed", "4"]);
    let cfg = dir.path().join("c.toml");
    let mut c = bdrseg_core::models::TrainConfig::desk();
    c.pipeline = bdrseg_core::models::PipelineConfig::desk(32, 32);
    c.schedule.total_epochs = 1;
    c.save(&cfg).unwrap();
    let ckpt = dir.path().join("m.bseg");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt)]);
    assert!(dir.path().join("m.bseg.toml").exists());
    let (mask, overlay, dmap) = (dir.path().join("o.pgm"), dir.path().join("ov.pgm"), dir.path().join("d.fmap"));
    let stdout = ok(&[
        "segment", "--ckpt", s(&ckpt), "--image", s(&data.join("images/s0000.pgm")), "--out", s(&mask),
        "--overlay", s(&overlay), "--dmap-out", s(&dmap),
    ]);
    assert!(stdout.contains("latency\t"));
    assert_eq!(read_mask(&mask).unwrap().shape(), (32, 32));
    assert!(overlay.exists() && dmap.exists());
}
