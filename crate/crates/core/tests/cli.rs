use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[corpus]
train = 2
val = 1
test = 2
frames = 30

[train_tracker]
epochs = 1
pairs = 8

[train_attack]
epochs = 1
searches = 2
frame_stride = 5

[attack]
trajectories = [{ mode = "fixed-direction", dx = 3.0, dy = 3.0 }]
"#;

fn run(root: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_siam-oneshot"))
        .arg("--config")
        .arg(root.join("small.toml"))
        .arg("--out")
        .arg(root.join("out"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = run(root, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("small.toml"), SMALL).unwrap();

    let missing = run(root, &["train-tracker"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("gen-data"));

    ok(root, &["gen-data"]);
    assert!(root.join("out/corpus/test").is_dir());
    ok(root, &["train-tracker"]);
    ok(root, &["train-attack", "--mode", "untargeted"]);
    ok(root, &["train-attack", "--mode", "targeted"]);
    ok(root, &["attack", "--mode", "clean"]);
    ok(root, &["attack", "--mode", "one-shot"]);
    ok(root, &["attack", "--mode", "targeted"]);
    ok(root, &["attack", "--mode", "one-shot", "--restarts"]);
    let table = ok(root, &["eval", "--metrics", "precision,success,restarts,target"]);
    assert!(table.starts_with("method\tepsilon\tsequences\tprecision20\tauc\trestarts"), "{table}");
    assert!(table.contains("one-shot"));
    for f in ["summary.csv", "frames.csv", "cost.csv", "precision.svg", "success.svg"] {
        assert!(root.join("out/eval").join(f).is_file(), "{f}");
    }
    let echo = std::fs::read_to_string(root.join("out/tracker/config.toml")).unwrap();
    assert!(echo.contains("seed = 3"));

    let bad = run(root, &["eval", "--metrics", "colour"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn unknown_config_keys_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), "[corpus]\ntrain = 2\nbogus = 1\n").unwrap();
    let out = run(dir.path(), &["gen-data"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("small.toml:3:"), "{err}");
}
