use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn star(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_star"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = star(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn recommend(dir: &Path, input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_star"))
        .current_dir(dir)
        .args(["recommend", "--checkpoint", "run/final.ckpt", "--k", "5"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

/// synth → preprocess → pretrain → train in `dir`.
fn small_run(dir: &Path) {
    ok(
        dir,
        &[
            "synth",
            "--items",
            "40",
            "--sessions",
            "300",
            "--seed",
            "2",
            "--out",
            "raw.tsv",
        ],
    );
    ok(
        dir,
        &[
            "preprocess",
            "--dataset",
            "canonical",
            "--input",
            "raw.tsv",
            "--out",
            "data",
        ],
    );
    let common = ["--dim", "8", "--glove-epochs", "3", "--deterministic"];
    let mut args = vec!["pretrain", "--data", "data", "--out", "emb.ckpt"];
    args.extend(common);
    ok(dir, &args);
    let mut args = vec![
        "train", "--data", "data", "--init", "emb.ckpt", "--out", "run", "--epochs", "1",
    ];
    args.extend(common);
    ok(dir, &args);
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = star(dir.path(), &["preprocess", "--input", "absent.csv", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn preprocess_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--items", "30", "--sessions", "200", "--out", "raw.tsv"]);
    ok(
        d,
        &[
            "preprocess",
            "--dataset",
            "canonical",
            "--input",
            "raw.tsv",
            "--out",
            "a",
        ],
    );
    ok(
        d,
        &[
            "preprocess",
            "--dataset",
            "canonical",
            "--input",
            "raw.tsv",
            "--out",
            "b",
        ],
    );
    for f in ["train.tsv", "test.tsv", "vocab.tsv", "run.conf"] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn pretrain_reports_theta_and_shape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--items", "30", "--sessions", "200", "--out", "raw.tsv"]);
    ok(
        d,
        &[
            "preprocess",
            "--dataset",
            "canonical",
            "--input",
            "raw.tsv",
            "--out",
            "data",
        ],
    );
    let text = ok(
        d,
        &[
            "pretrain",
            "--data",
            "data",
            "--out",
            "e.ckpt",
            "--dim",
            "6",
            "--glove-epochs",
            "2",
            "--theta-multiplier",
            "3",
        ],
    );
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line[key.len()..].trim().trim_end_matches('s').parse().unwrap()
    };
    assert!((value("theta:") - 3.0 * value("mean interval:")).abs() < 1e-2);
    assert!(text.contains("embedding shape: [30, 6]"));
}

#[test]
fn recommend_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_run(d);
    assert!(d.join("run/best.ckpt").exists());

    let out = recommend(d, "7 1000\n");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let probs: Vec<f64> = text
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 5);
    assert!(probs.iter().sum::<f64>() <= 1.0 + 1e-9);
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));

    let out = recommend(d, "7 1000\nnot-an-item 1010\n");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not-an-item"));

    let report = ok(
        d,
        &[
            "evaluate",
            "--checkpoint",
            "run/final.ckpt",
            "--data",
            "data",
            "--report",
            "r.tsv",
        ],
    );
    for name in ["STAR", "POP", "S-POP", "Item-KNN"] {
        assert!(report.contains(name), "{report}");
    }
    let first = fs::read(d.join("r.tsv")).unwrap();
    ok(
        d,
        &[
            "evaluate",
            "--checkpoint",
            "run/final.ckpt",
            "--data",
            "data",
            "--report",
            "r.tsv",
        ],
    );
    assert_eq!(fs::read(d.join("r.tsv")).unwrap(), first);
}

#[test]
fn resume_extends_training() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_run(d);
    ok(
        d,
        &[
            "train",
            "--data",
            "data",
            "--resume",
            "run/final.ckpt",
            "--out",
            "run",
            "--epochs",
            "2",
        ],
    );
    let log = fs::read_to_string(d.join("run/train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");

    ok(
        d,
        &[
            "train",
            "--data",
            "data",
            "--init",
            "emb.ckpt",
            "--out",
            "straight",
            "--epochs",
            "2",
            "--dim",
            "8",
            "--glove-epochs",
            "3",
            "--deterministic",
        ],
    );
    assert_eq!(
        fs::read(d.join("run/final.ckpt")).unwrap(),
        fs::read(d.join("straight/final.ckpt")).unwrap()
    );
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_run(d);
    fs::write(d.join("c.conf"), "epochs = 1\ndropout = 0.25\nseed = 5\n").unwrap();
    ok(
        d,
        &[
            "train",
            "--data",
            "data",
            "--init",
            "emb.ckpt",
            "--out",
            "v1",
            "--config",
            "c.conf",
            "--seed",
            "6",
            "--dim",
            "8",
            "--no-self-attention",
        ],
    );
    let out = ok(d, &["evaluate", "--checkpoint", "v1/final.ckpt", "--data", "data"]);
    assert!(out.contains("STAR_V1"), "{out}");
    let bytes = fs::read(d.join("v1/final.ckpt")).unwrap();
    let text = String::from_utf8_lossy(&bytes);
    assert!(text.contains("config.dropout = 0.25"));
    assert!(text.contains("config.seed = 6"));
    assert!(text.contains("config.dataset = canonical"));
}
