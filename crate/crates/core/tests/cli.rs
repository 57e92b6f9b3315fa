use std::path::Path;
use std::process::{Command, Output};

fn mlalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlalign"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(mlalign(&[]).status.code(), Some(1));
    assert_eq!(mlalign(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(mlalign(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlalign(&["train", "--data", p(&dir.path().join("nowhere")), "--out", p(&dir.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_train_evaluate_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.conf");
    std::fs::write(
        &spec,
        "task = qa\nn_concepts = 8\nn_train = 12\nn_test = 6\nframes_per_video = 8\nvocab_size = 100\nstatic_dim = 8\nmotion_dim = 4\nseed = 3\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    let out = mlalign(&["gen-data", "--spec", p(&spec), "--out", p(&data), "--binary"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("train.mlva").exists());

    let conf = dir.path().join("train.conf");
    std::fs::write(&conf, "# small model\nembed_dim = 8\nhidden_dim = 12\nbatch_size = 4\n").unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let out = mlalign(&[
        "train", "--data", p(&data), "--config", p(&conf), "--out", p(&ckpt), "--epochs", "2", "--lr", "1e-3",
        "--lambda1", "0.5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("model.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let saved = std::fs::read_to_string(dir.path().join("model.ckpt.conf")).unwrap();
    assert!(saved.lines().any(|l| l == "lambda1=0.5"), "{saved}");

    let report = dir.path().join("report.txt");
    let out = mlalign(&["eval", "--data", p(&data), "--ckpt", p(&ckpt), "--report", p(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("accuracy"), "{text}");

    let csv = dir.path().join("heat.csv");
    let out = mlalign(&["heatmap", "--data", p(&data), "--sample", "test-00000", "--ckpt", p(&ckpt), "--out", p(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);

    let out = mlalign(&["heatmap", "--data", p(&data), "--sample", "nope", "--ckpt", p(&ckpt), "--out", p(&csv)]);
    assert_eq!(out.status.code(), Some(2));

    let out = mlalign(&[
        "train", "--data", p(&data), "--out", p(&ckpt), "--resume", p(&ckpt), "--epochs", "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("model.ckpt.log.jsonl")).unwrap();
    assert!(log.lines().count() >= 1);
}

#[test]
fn gradcheck_command_passes() {
    let out = mlalign(&["gradcheck", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max_rel_error="));
}
