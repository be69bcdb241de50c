use std::path::Path;
use std::process::{Command, Output};

use fpk::gridnet::{BeamConfig, TrainConfig};
use fpk::io::{read_json, read_view, to_json, write_homography, write_json, write_trajectories, PredictionFile};
use fpk::multiview::Homography;
use fpk::pipeline::{self, Predictor};
use fpk::{PredictionSet, Trajectory};
use serde_json::Value;

const CONFIG: &str = r#"{
  "seed": 11,
  "grid": {"origin": [0, 0], "extent": [12, 12], "rows": 12, "cols": 12},
  "horizon": {"obs": 3, "pred": 4},
  "scenario": {"n_agents": 8, "destinations_per_agent": 2, "futures_per_agent": 2,
               "walkways": true, "n_views": 2, "noise_sigma": 0.05},
  "train": {"radius": 1, "epochs": 15, "learning_rate": 1.0},
  "beam": {"k": 2, "gamma0": 1.0}
}"#;

fn fpk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpk"))
        .current_dir(dir)
        .env_remove("FPK_SEED")
        .args(args)
        .output()
        .expect("spawn fpk")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = fpk(dir, args);
    assert!(
        out.status.success(),
        "fpk {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    ok(dir.path(), &["--config", "c.json", "generate", "--out", "ds"]);
    dir
}

fn pipeline_run(dir: &Path) {
    let c = ["--config", "c.json"];
    let run = |rest: &[&str]| ok(dir, &[&c[..], rest].concat());
    run(&["train", "--data", "ds", "--out", "m.json"]);
    run(&["predict", "--data", "ds", "--checkpoint", "m.json", "--out", "p.json"]);
    run(&["evaluate", "--data", "ds", "--predictions", "p.json", "--out", "r.json"]);
}

#[test]
fn evaluate_ground_truth_gives_zero_ade() {
    let dir = setup();
    let view = read_view(&dir.path().join("ds"), "view_0").unwrap();
    let preds = PredictionFile {
        samples: view
            .samples
            .iter()
            .map(|s| (s.sample_id.clone(), PredictionSet::new(s.futures.clone()).unwrap()))
            .collect(),
    };
    write_json(&dir.path().join("gt.json"), &preds).unwrap();
    ok(
        dir.path(),
        &["--config", "c.json", "evaluate", "--data", "ds", "--predictions", "gt.json", "--out", "r.json"],
    );
    let report: Value = read_json(&dir.path().join("r.json")).unwrap();
    assert_eq!(report["ade"]["mean"], 0.0);
    assert_eq!(report["min_ade_multi"]["mean"], 0.0);
}

#[test]
fn generate_then_validate_is_clean() {
    let dir = setup();
    ok(
        dir.path(),
        &["--config", "c.json", "validate", "--data", "ds", "--view", "view_1", "--out", "v.json"],
    );
    let report: Value = read_json(&dir.path().join("v.json")).unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn cli_matches_library_bit_for_bit() {
    let dir = setup();
    pipeline_run(dir.path());
    let view = read_view(&dir.path().join("ds"), "view_0").unwrap();
    let train = TrainConfig {
        radius: 1,
        epochs: 15,
        learning_rate: 1.0,
        seed: 11,
        ..TrainConfig::default()
    };
    let ck = pipeline::train_gridnet(&view, &train).unwrap();
    let preds = pipeline::predict(&view, &Predictor::Gridnet(&ck.params), &BeamConfig::new(2, 1.0)).unwrap();
    let report = pipeline::evaluate(&view, &preds).unwrap();
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("m.json"), to_json(&ck).unwrap());
    assert_eq!(read("p.json"), to_json(&preds).unwrap());
    assert_eq!(read("r.json"), to_json(&report).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (setup(), setup());
    pipeline_run(a.path());
    pipeline_run(b.path());
    for f in ["m.json", "p.json", "r.json", "ds/view_1/observations.tsv", "ds/truth.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn manifest_records_seed_and_config_hash() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_fpk"))
        .current_dir(dir.path())
        .env("FPK_SEED", "77")
        .args(["--config", "c.json", "generate", "--out", "ds2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let m: Value = read_json(&dir.path().join("ds2/manifest.json")).unwrap();
    assert_eq!(m["seed"], 77);
    assert_eq!(m["config"]["scenario"]["seed"], 77);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    let m0: Value = read_json(&dir.path().join("ds/manifest.json")).unwrap();
    assert_ne!(m0["config_sha256"], m["config_sha256"]);
    let t0 = std::fs::read(dir.path().join("ds/truth.json")).unwrap();
    let t1 = std::fs::read(dir.path().join("ds2/truth.json")).unwrap();
    assert_ne!(t0, t1);
}

#[test]
fn errors_are_one_json_line() {
    let dir = setup();
    for args in [
        &["evaluate", "--data", "ds", "--predictions", "missing.json", "--out", "r.json"][..],
        &["--set", "train.epochs=-1", "train", "--data", "ds", "--out", "m.json"],
        &["--set", "bogus=1", "generate", "--out", "x"],
        &["predict", "--data", "ds", "--out", "p.json"],
        &["train", "--no-such-flag"],
    ] {
        let out = fpk(dir.path(), &[&["--config", "c.json"][..], args].concat());
        assert!(!out.status.success(), "{args:?} should fail");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        let v: Value = serde_json::from_str(err.trim_end()).unwrap();
        assert!(v["error"]["kind"].is_string() && v["error"]["message"].is_string());
    }
}

#[test]
fn baselines_simaug_augment_and_heatmaps() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "c.json"];
    let run = |rest: &[&str]| ok(d, &[&c[..], rest].concat());
    for model in ["cv", "linear", "nn"] {
        let p = format!("p_{model}.json");
        run(&["predict", "--data", "ds", "--model", model, "--out", &p]);
        run(&["evaluate", "--data", "ds", "--predictions", &p, "--out", &format!("r_{model}.json")]);
    }
    run(&["train", "--data", "ds", "--simaug", "--epochs", "3", "--out", "ms.json"]);
    let ms: Value = read_json(&d.join("ms.json")).unwrap();
    assert_eq!(ms["loss_trace"].as_array().unwrap().len(), 3);
    run(&["augment", "--data", "ds", "--views", "view_0,view_1", "--out", "aug.json"]);
    let aug: Value = read_json(&d.join("aug.json")).unwrap();
    assert_eq!(aug.as_array().unwrap().len(), 16);
    run(&["plot-heatmap", "--data", "ds", "--predictions", "p_cv.json", "--out", "hm"]);
    let pgm = std::fs::read_to_string(d.join("hm/s0000_t000.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n12 12\n255\n"));
    assert_eq!(pgm.lines().count(), 3 + 12);
    let txt = std::fs::read_to_string(d.join("hm/s0000_t003.txt")).unwrap();
    let total: f64 = txt.split_whitespace().map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-4);
}

#[test]
fn associate_then_smooth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let path: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0)).collect();
    let cam_a = Trajectory::from_xy("p1", 0, &path).unwrap();
    let cam_b = Trajectory::from_xy("q7", 0, &path.iter().map(|&(x, y)| (2.0 * x, 2.0 * y)).collect::<Vec<_>>()).unwrap();
    let far = Trajectory::from_xy("p2", 0, &[(50.0, 50.0), (51.0, 50.0)]).unwrap();
    write_trajectories(&d.join("tracks/a.tsv"), &[cam_a, far]).unwrap();
    write_trajectories(&d.join("tracks/b.tsv"), &[cam_b]).unwrap();
    write_homography(&d.join("homs/a.txt"), &Homography::identity()).unwrap();
    let half = Homography::from_row_slice(&[0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0]).unwrap();
    write_homography(&d.join("homs/b.txt"), &half).unwrap();
    ok(d, &["associate", "--tracklets", "tracks", "--homographies", "homs", "--out", "assoc"]);
    let tracks: Value = read_json(&d.join("assoc/global_tracks.json")).unwrap();
    let tracks = tracks.as_array().unwrap();
    assert_eq!(tracks.len(), 2);
    let merged = tracks.iter().find(|t| t["members"].as_array().unwrap().len() == 2).unwrap();
    assert_eq!(merged["members"], serde_json::json!([0, 2]));
    let tsv = std::fs::read_to_string(d.join("assoc/global_tracks.tsv")).unwrap();
    assert_eq!(tsv.lines().next().unwrap(), "global_id\tframe_id\tx\ty");
    assert_eq!(tsv.lines().count(), 1 + 10 + 2);

    ok(d, &["smooth", "--input", "assoc/global_tracks.json", "--window", "3", "--out", "smooth.json"]);
    let smoothed: Value = read_json(&d.join("smooth.json")).unwrap();
    assert_eq!(smoothed.as_array().unwrap().len(), 2);
    ok(d, &["smooth", "--input", "tracks/a.tsv", "--window", "1", "--out", "same.tsv"]);
    assert_eq!(
        std::fs::read_to_string(d.join("same.tsv")).unwrap(),
        std::fs::read_to_string(d.join("tracks/a.tsv")).unwrap()
    );
}
