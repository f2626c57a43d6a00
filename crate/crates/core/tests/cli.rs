use std::path::Path;
use std::process::{Command, Output};

fn sc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entropy-sc"))
        .args(args)
        .env("SC_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn entropy-sc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_bars(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("bars");
    let o = sc(&["generate-bars", "--grid", "3", "--n-fields", "4", "--n", "60", "--seed", "3", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn generate_bars_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_bars(dir.path());
    for f in ["data.scd1", "ground_truth.json", "ground_truth.pgm", "samples.pgm"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let rows: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(out.join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.len() == 4));
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(code(&sc(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&sc(&["train"])), 2);
    assert_eq!(code(&sc(&["generate-bars", "--grid", "2", "--n-fields", "9"])), 2);
}

#[test]
fn help_exits_cleanly() {
    let o = sc(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("train"));
}

#[test]
fn missing_input_file_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.scd1");
    let o = sc(&["train", "--data", path(&missing), "--latents", "2", "--out", path(&dir.path().join("o"))]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"grid": 3, "colour": "red"}"#).unwrap();
    assert_eq!(code(&sc(&["generate-bars", "--config", path(&cfg)])), 2);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"grid": 3, "n-fields": 4, "n": 10, "seed": 1}"#).unwrap();
    let out = dir.path().join("o");
    let o = sc(&["generate-bars", "--config", path(&cfg), "--n-fields", "6", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(out.join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(rows[0].len(), 6);
}

#[test]
fn zero_epochs_still_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let bars = small_bars(dir.path());
    let out = dir.path().join("run");
    let o = sc(&[
        "train", "--data", path(&bars.join("data.scd1")), "--latents", "4", "--epochs", "0", "--seed", "1", "--out", path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint.json").is_file());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1);
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let bars = small_bars(dir.path());
    let data = bars.join("data.scd1");
    let out = dir.path().join("run");
    let o = sc(&[
        "train", "--data", path(&data), "--latents", "4", "--epochs", "2", "--batch", "30", "--optimizer", "adam", "--lr", "0.01",
        "--e-step-iters", "10", "--eval-iters", "20", "--seed", "2", "--out", path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    assert!(out.join("fields_final.pgm").is_file());

    let report = dir.path().join("eval.json");
    let o = sc(&["eval", "--checkpoint", path(&out.join("checkpoint.json")), "--data", path(&data), "--iters", "50", "--out", path(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["breakdown"]["total"].as_f64().unwrap().is_finite());
    let g = v["gini_mean"].as_f64().unwrap();
    assert!((0.0..1.0).contains(&g));
}

#[test]
fn eval_accepts_a_csv_dictionary() {
    let dir = tempfile::tempdir().unwrap();
    let bars = small_bars(dir.path());
    let rows: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(bars.join("ground_truth.json")).unwrap()).unwrap();
    let mut csv = String::from("w0,w1,w2,w3\n");
    for r in &rows {
        csv.push_str(&r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    let dict = dir.path().join("dict.csv");
    std::fs::write(&dict, csv).unwrap();
    let o = sc(&["eval", "--dictionary", path(&dict), "--data", path(&bars.join("data.scd1")), "--iters", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["breakdown"]["total"].as_f64().unwrap().is_finite());

    let both = sc(&["eval", "--dictionary", path(&dict), "--checkpoint", path(&dict), "--data", path(&bars.join("data.scd1"))]);
    assert_eq!(code(&both), 2);
}

#[test]
fn eval_rejects_a_dictionary_of_the_wrong_shape() {
    let dir = tempfile::tempdir().unwrap();
    let bars = small_bars(dir.path());
    let dict = dir.path().join("dict.json");
    std::fs::write(&dict, "[[1.0, 0.0], [0.0, 1.0]]").unwrap();
    let o = sc(&["eval", "--dictionary", path(&dict), "--data", path(&bars.join("data.scd1"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_emits_a_passing_json_report() {
    let o = sc(&["verify", "--suite", "math", "--trials", "2", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["failed"].as_u64(), Some(0));
    assert!(v["passed"].as_u64().unwrap() > 0);
}

#[test]
fn extract_patches_from_pgm_images() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.pgm");
    let side = 32usize;
    let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
    bytes.extend((0..side * side).map(|i| ((i * 37 + (i / side) * 11) % 251) as u8));
    std::fs::write(&img, bytes).unwrap();
    let out = dir.path().join("p.scd1");
    let o = sc(&["extract-patches", "--images", path(&img), "--patch-side", "4", "--n-patches", "200", "--seed", "1", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let data = entropy_sc::data::formats::read_scd1(&out).unwrap();
    assert_eq!((data.x.nrows(), data.x.ncols()), (200, 16));
}
