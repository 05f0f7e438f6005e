use std::path::Path;
use std::process::{Command, Output};

fn wholebody(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wholebody"))
        .env("WHOLEBODY_DATA", data)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn collect_writes_episodes_and_manifest() {
    let data = tempfile::tempdir().unwrap();
    stdout(&wholebody(data.path(), &["collect", "--task", "wipe", "--n", "3", "--seed", "1"]));
    let dir = data.path().join("wipe");
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.trim().is_empty()).count(), 3);
    let files = std::fs::read_dir(&dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "maep"))
        .count();
    assert_eq!(files, 3);

    let first = dir.join("wipe_0000.maep");
    let text = stdout(&wholebody(data.path(), &["inspect", first.to_str().unwrap()]));
    for key in ["task = wipe", "origin = mobile", "control_hz = 50", "cameras = top:64x64,lwrist:32x32,rwrist:32x32"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
}

#[test]
fn cotraining_without_static_corpus_fails_clearly() {
    let data = tempfile::tempdir().unwrap();
    stdout(&wholebody(data.path(), &["collect", "--n", "2"]));
    let o = wholebody(data.path(), &["train", "--algo", "bc", "--rho", "0.5", "--steps", "5"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("static corpus not found"), "{err}");
    assert!(err.contains("wholebody collect"), "{err}");
}

#[test]
fn train_then_eval() {
    let data = tempfile::tempdir().unwrap();
    stdout(&wholebody(data.path(), &["collect", "--n", "3"]));
    let model = data.path().join("m.wbck");
    stdout(&wholebody(
        data.path(),
        &["train", "--algo", "bc", "--rho", "0", "--steps", "20", "--out", model.to_str().unwrap()],
    ));
    let text = stdout(&wholebody(data.path(), &["eval", model.to_str().unwrap(), "--episodes", "2", "--noise-free"]));
    assert!(text.lines().any(|l| l.starts_with("whole: ") && l.contains("/2 = ")), "{text}");
}

#[test]
fn drift_report_reruns_byte_for_byte() {
    let data = tempfile::tempdir().unwrap();
    let cfg = data.path().join("drift.cfg");
    std::fs::write(&cfg, "replays = 4\nseed = 9\n").unwrap();
    let first = data.path().join("drift.txt");
    let second = data.path().join("again.txt");
    stdout(&wholebody(
        data.path(),
        &["replay-drift", "--config", cfg.to_str().unwrap(), "--out", first.to_str().unwrap()],
    ));
    stdout(&wholebody(
        data.path(),
        &["rerun", first.to_str().unwrap(), "--out", second.to_str().unwrap()],
    ));
    let a = std::fs::read_to_string(&first).unwrap();
    assert!(a.contains("replays = 4"));
    assert_eq!(a, std::fs::read_to_string(&second).unwrap());
}

#[test]
fn unknown_task_is_rejected() {
    let data = tempfile::tempdir().unwrap();
    let o = wholebody(data.path(), &["collect", "--task", "juggle", "--n", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}
