use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use udit::checkpoint::save_classifier;
use udit_core::datasets::{AttrKind, AttributeSpec};
use udit_core::semext::{AttributeClassifier, ClassifierArch};

fn udit(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_udit"));
    cmd.args(args).env_remove("UDIT_SEED");
    if let Some(s) = seed_env {
        cmd.env("UDIT_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn effective(out: &Path) -> Value {
    serde_json::from_slice(&fs::read(out.join("effective_config.json")).unwrap()).unwrap()
}

fn datagen(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["datagen", "--out", out.to_str().unwrap(), "--major", "3", "--minor", "1"];
    args.extend_from_slice(extra);
    udit(&args, None)
}

#[test]
fn unknown_flag_exits_with_usage() {
    let o = udit(&["train", "--no-such-flag"], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&udit(&["frobnicate"], None)), 2);
}

#[test]
fn datagen_echoes_config_and_layers_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"major": 5, "minor": 2, "seed": 9}"#).unwrap();
    let out = dir.path().join("d");
    let o = udit(
        &[
            "datagen",
            "--out",
            out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "minor=1",
            "--major",
            "3",
        ],
        Some("44"),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e = effective(&out);
    assert_eq!(e["subcommand"], "datagen");
    assert_eq!(e["config"]["major"], 3);
    assert_eq!(e["config"]["minor"], 1);
    // a seed in the file beats the environment
    assert_eq!(e["config"]["seed"], 9);
    assert_eq!(fs::read_dir(out.join("A/images")).unwrap().count(), 4);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&udit(&["datagen", "--out", a.to_str().unwrap(), "--major", "3", "--minor", "1"], Some("44"))), 0);
    assert_eq!(effective(&a)["config"]["seed"], 44);
    assert_eq!(
        code(&udit(&["datagen", "--out", b.to_str().unwrap(), "--major", "3", "--minor", "1", "--seed", "44"], None)),
        0
    );
    assert_eq!(fs::read(a.join("labels.csv")).unwrap(), fs::read(b.join("labels.csv")).unwrap());
    let img = "B/images/00002.png";
    assert_eq!(fs::read(a.join(img)).unwrap(), fs::read(b.join(img)).unwrap());
    assert_eq!(code(&udit(&["datagen", "--out", c.to_str().unwrap(), "--major", "3", "--minor", "1"], Some("x"))), 2);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&datagen(&out, &["--image-size", "96"])), 2);
    assert_eq!(code(&datagen(&out, &["--set", "image_size=\"big\""])), 2);
    assert_eq!(code(&datagen(&out, &["--config", "/nonexistent/c.json"])), 2);
    assert_eq!(code(&datagen(&out, &["--set", "novalue"])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = dir.path().join("o");
    let o =
        udit(&["train", "--out", out.to_str().unwrap(), "--dataset", empty.to_str().unwrap(), "--lambda-u", "0"], None);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("effective_config.json").exists());
}

#[test]
fn checkpoint_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&datagen(&data, &[])), 0);
    let bogus = dir.path().join("bogus.ckpt");
    fs::write(&bogus, b"\x00\x01garbage").unwrap();
    let img = data.join("A/images").read_dir().unwrap().next().unwrap().unwrap().path();
    let out = dir.path().join("t");
    let o = udit(
        &[
            "translate",
            "--out",
            out.to_str().unwrap(),
            "--checkpoint",
            bogus.to_str().unwrap(),
            "--input",
            img.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn identity_evaluation_reports_zero_change() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&datagen(&data, &[])), 0);
    let spec = AttributeSpec::new("shape", AttrKind::Unwanted, &["circle", "square"]);
    let clf = AttributeClassifier::<f32>::new(spec, ClassifierArch { channels: vec![4, 8] }, 3).unwrap();
    let ckpt = dir.path().join("clf.ckpt");
    save_classifier(&ckpt, &clf).unwrap();
    let out = dir.path().join("eval");
    let o = udit(
        &[
            "evaluate",
            "--out",
            out.to_str().unwrap(),
            "--test-dataset",
            data.to_str().unwrap(),
            "--classifier",
            ckpt.to_str().unwrap(),
            "--identity",
            "-k",
            "2",
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reports: Vec<Value> = serde_json::from_slice(&fs::read(out.join("reports.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        assert_eq!(r["drop_in_confidence"], 0.0);
        assert_eq!(r["feature_distance"], 0.0);
    }
    assert_eq!(effective(&out)["subcommand"], "evaluate");
}

#[test]
fn report_needs_inputs_and_renders_charts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&udit(&["report", "--out", dir.path().to_str().unwrap()], None)), 2);
    let empty = dir.path().join("empty.json");
    fs::write(&empty, "[]").unwrap();
    let o = udit(&["report", "--out", dir.path().join("r").to_str().unwrap(), empty.to_str().unwrap()], None);
    assert_ne!(code(&o), 0);
}
