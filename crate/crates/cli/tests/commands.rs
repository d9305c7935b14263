use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::tempdir;

use wpfm_core::data::load_features;

fn wpfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wpfm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn small_config(dir: &Path, epochs: usize) -> String {
    let cfg = serde_json::json!({
        "train": { "epochs": epochs, "batch_size": 4 },
        "net": { "hidden": [16, 16], "t_embed_dim": 8, "c_embed_dim": 8 },
        "task": { "d": 6, "c_dim": 4, "shots_per_class": 4, "heldout_per_class": 20 }
    });
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = wpfm(&["train", "--config", "/nonexistent/cfg.json", "--out", "/tmp/never"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"train": {"epoch": 3}}"#).unwrap();
    let out = wpfm(&["train", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_warp_flag_is_a_usage_error() {
    assert_eq!(code(&wpfm(&["train", "--warp", "spherical"])), 2);
}

#[test]
fn eval_without_checkpoint_file_fails_cleanly() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("none.bin");
    let out = wpfm(&["eval", "--checkpoint", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn untrained_checkpoint_transports_by_identity() {
    let dir = tempdir().unwrap();
    let cfg = small_config(dir.path(), 0);
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = wpfm(&["train", "--config", &cfg, "--out", run_s]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("checkpoint.bin");
    let out = wpfm(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--out", run_s]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let eval = json(&run.join("eval.json"));
    assert_eq!(eval["accuracy"], eval["identity_accuracy"]);
    assert_eq!(eval["n_examples"], 40);
    assert!(run.join("eval_manifest.json").exists());
}

#[test]
fn train_writes_loss_log_and_manifest() {
    let dir = tempdir().unwrap();
    let cfg = small_config(dir.path(), 3);
    let run = dir.path().join("run");
    let out = wpfm(&["train", "--config", &cfg, "--seed", "5", "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,loss,radial_loss,angular_loss,wall_ms");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,"));
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["task"]["seed"], 5);
}

#[test]
fn oracle_eval_is_exact() {
    let dir = tempdir().unwrap();
    let cfg = small_config(dir.path(), 0);
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    assert_eq!(code(&wpfm(&["train", "--config", &cfg, "--out", run_s])), 0);
    let ckpt = run.join("checkpoint.bin");
    for n in ["1", "64"] {
        let out = wpfm(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--oracle", "--n-steps", n, "--out", run_s]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let eval = json(&run.join("eval.json"));
        assert_eq!(eval["accuracy"], 1.0);
        assert!(eval["mean_angular_endpoint_error"].as_f64().unwrap() < 1e-12);
    }
}

#[test]
fn gen_data_round_trips_through_feature_eval() {
    let dir = tempdir().unwrap();
    let cfg = small_config(dir.path(), 0);
    let data = dir.path().join("data");
    let out = wpfm(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let heldout = load_features(&data.join("heldout_x0.feat")).unwrap();
    assert_eq!(heldout.len(), 40);
    assert_eq!(heldout[0].len(), 6);
    assert_eq!(load_features(&data.join("prototypes.feat")).unwrap().len(), 2);
    let labels = fs::read_to_string(data.join("heldout_labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 40);

    let run = dir.path().join("run");
    assert_eq!(code(&wpfm(&["train", "--config", &cfg, "--out", run.to_str().unwrap()])), 0);
    let out = wpfm(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.bin").to_str().unwrap(),
        "--features",
        data.join("heldout_x0.feat").to_str().unwrap(),
        "--labels",
        data.join("heldout_labels.txt").to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // zero field, so transport is the identity up to the f32 file precision
    let moved = load_features(&run.join("transported.feat")).unwrap();
    for (a, b) in moved.iter().zip(&heldout) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn studies_write_their_tables() {
    let dir = tempdir().unwrap();
    let out_s = dir.path().to_str().unwrap();
    let out = wpfm(&["study", "speed", "--geodesic", "chord", "--theta0", "1,0", "--theta1", "0,1", "--r0", "1", "--r1", "1", "--out", out_s]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let speed = fs::read_to_string(dir.path().join("speed.csv")).unwrap();
    assert_eq!(speed.lines().count(), 1 + 1001);

    let out = wpfm(&["study", "truncation", "--warp", "hyperbolic", "--out", out_s]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&dir.path().join("truncation.json"));
    let slope = rep["fitted_slope"].as_f64().unwrap();
    assert!((1.9..=2.1).contains(&slope), "slope {slope}");

    let out = wpfm(&["study", "radial", "--out", out_s]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("radial.csv").exists());
    assert!(json(&dir.path().join("radial.json")).as_object().unwrap().len() >= 2);
}

#[test]
fn speed_study_rejects_antipodal_endpoints() {
    let dir = tempdir().unwrap();
    let out = wpfm(&["study", "speed", "--theta0", "1,0", "--theta1", "-1,0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}
