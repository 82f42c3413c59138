use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_and_ensemble_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = smoke_config();
    let o = dcn(&["train", s(&cfg), "--out", s(&out), "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 10);
    assert!(out.join("final.json").exists() && out.join("final.json.bin").exists());

    let ckpt = out.join("final.json");
    let o = dcn(&["eval", s(&cfg), "--checkpoint", s(&ckpt), "--episodes", "8", "--inner-steps", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row = String::from_utf8_lossy(&o.stdout);
    assert!(row.contains('±'), "{row}");

    let snaps = out.join("snapshots");
    let o = dcn(&["ensemble", s(&cfg), "--dir", s(&snaps), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("ensemble.json")).unwrap();
    assert!(report.contains("\"trace\""));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = dcn(&["train", s(&cfg), "--out", s(&out), "--threads", "1", "--seed", "11", "--iterations", "4"]);
        assert!(o.status.success());
        (
            std::fs::read(out.join("metrics.jsonl")).unwrap(),
            std::fs::read(out.join("final.json.bin")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn malformed_config_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(smoke_config()).unwrap().replace("decoders = 2", "decoders = 3");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text).unwrap();
    let o = dcn(&["train", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.decoders"));

    let typo = dir.path().join("typo.toml");
    let text = std::fs::read_to_string(smoke_config()).unwrap().replace("batch = 4", "batchsize = 4");
    std::fs::write(&typo, text).unwrap();
    let o = dcn(&["train", s(&typo)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batchsize"));
}

#[test]
fn empty_ensemble_dir_exits_2_and_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let o = dcn(&["ensemble", s(&cfg), "--dir", s(&empty), "--out", s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));

    let out = dir.path().join("run");
    assert!(dcn(&["train", s(&cfg), "--out", s(&out), "--iterations", "1"]).status.success());
    let text = std::fs::read_to_string(&cfg).unwrap().replace("hidden = [16, 16]", "hidden = [16, 12]");
    let other = dir.path().join("other.toml");
    std::fs::write(&other, text).unwrap();
    let ckpt = out.join("final.json");
    let o = dcn(&["eval", s(&other), "--checkpoint", s(&ckpt), "--episodes", "2"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn non_finite_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(smoke_config())
        .unwrap()
        .replace("lr = 0.01", "lr = 1e200\nlearnable_rates = false");
    let cfg = dir.path().join("nan.toml");
    std::fs::write(&cfg, text).unwrap();
    let o = dcn(&["train", s(&cfg), "--out", s(&dir.path().join("n"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("iteration 1") && err.contains("task"), "{err}");
}
