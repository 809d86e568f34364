use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn spat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn spat")
}

fn ok(args: &[&str]) -> String {
    let out = spat(args);
    assert!(
        out.status.success(),
        "spat {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Reference intersection over a two-hour span that crosses a plan change.
fn short_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(repo().join("configs/reference-intersection.toml")).unwrap();
    let text = text
        .replace("start = 21600    # 06:00\nend = 79200", "start = 30600\nend = 37800")
        .replace("warmup = 900", "warmup = 300");
    assert!(text.contains("start = 30600"));
    let p = dir.join("short.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(spat(&[]).status.code(), Some(2));
    assert_eq!(spat(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(spat(&["predict", "--checkpoint", "x", "--bogus"]).status.code(), Some(2));
    assert_eq!(spat(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_one() {
    let out = spat(&["predict", "--checkpoint", "/nonexistent.ckpt", "--window-file", "/nonexistent.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = short_config(d);
    let feed = d.join("feed");
    let mut streams = Vec::new();
    for date in ["2024-03-04", "2024-03-05", "2024-03-06"] {
        let out = ok(&["simulate", "--config", s(&cfg), "--date", date, "--seed", "7", "--out", s(&feed)]);
        streams.push(PathBuf::from(out.trim()));
    }
    assert_eq!(streams[0], feed.join("2024-03-04.jsonl"));

    let manifest = d.join("manifest.json");
    let days = d.join("days");
    let mut args = vec!["prepare", "--config", s(&cfg), "--manifest", s(&manifest), "--freeze", "--out", s(&days)];
    args.extend(streams.iter().map(|p| s(p)));
    let listed = ok(&args);
    assert_eq!(listed.lines().count(), 3);
    assert!(manifest.exists());

    let day = |n: &str| days.join(format!("2024-03-0{n}.day"));
    let (d4, d5, d6) = (day("4"), day("5"), day("6"));
    let common = ["--window", "20", "--neurons", "3", "--epochs", "1", "--batch-size", "200", "--train-stride", "10", "--val-stride", "10"];
    for loss in ["mse", "tdse"] {
        let out_dir = d.join(loss);
        let mut args = vec!["train", "--train", s(&d4), "--val", s(&d5), "--loss", loss, "--out", s(&out_dir)];
        args.extend(common);
        let tsv = ok(&args);
        assert!(tsv.starts_with("epoch\t"));
        assert!(out_dir.join("best.ckpt").exists());
        let ck = out_dir.join("best.ckpt");
        let ev = d.join(format!("eval-{loss}"));
        ok(&["evaluate", "--checkpoint", s(&ck), "--test", s(&d6), "--window", "20", "--stride", "5", "--out", s(&ev)]);
        assert!(ev.join("report.json").exists());
    }

    let a = format!("mse={}", s(&d.join("eval-mse/report.json")));
    let b = format!("tdse={}", s(&d.join("eval-tdse/report.json")));
    let text = ok(&["compare", &a, &b, "--out", s(&d.join("cmp"))]);
    assert!(text.contains("mse_mae") && text.contains("tdse_mae"));
    assert!(d.join("cmp/comparison.json").exists());

    // A window of 20 zero rows at the manifest width.
    let width = spat_core::ingest::SchemaManifest::load(&manifest).unwrap().feature_count;
    let row = vec!["0"; width].join(" ");
    let wf = d.join("window.txt");
    std::fs::write(&wf, vec![row; 20].join("\n")).unwrap();
    let pred = ok(&["predict", "--checkpoint", s(&d.join("mse/best.ckpt")), "--window-file", s(&wf)]);
    let vals: Vec<u32> = pred.split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert_eq!(vals.len(), 6);
    assert!(vals.iter().all(|&v| v <= 200));

    std::fs::write(&wf, "0 0 0\n").unwrap();
    let bad = spat(&["predict", "--checkpoint", s(&d.join("mse/best.ckpt")), "--window-file", s(&wf)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn experiment_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/smoke-experiment.toml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out_a = ok(&["experiment", "--config", s(&cfg), "--out", s(&a)]);
    let out_b = ok(&["experiment", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(out_a, out_b);
    for loss in ["mse", "mae", "mape", "tdse"] {
        for f in ["best.ckpt", "report.json", "report.tsv", "train-report.tsv"] {
            let rel = format!("seed-1/{loss}/{f}");
            let x = std::fs::read(a.join(&rel)).unwrap();
            let y = std::fs::read(b.join(&rel)).unwrap();
            assert!(x == y, "{rel} differs");
        }
    }
    assert_eq!(
        std::fs::read(a.join("seed-1/comparison.txt")).unwrap(),
        std::fs::read(b.join("seed-1/comparison.txt")).unwrap()
    );
}
