use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use planedepth::io::{read_pfm, read_ppm};

fn planedepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planedepth")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn kitti_camera(dir: &Path) -> std::path::PathBuf {
    let cam = dir.join("kitti.json");
    fs::write(
        &cam,
        r#"{"fx": 720.0, "fy": 720.0, "cx": 319.5, "cy": 95.5, "width": 640, "height": 192,
            "h": 1.65, "R": [1, 0, 0, 0, 1, 0, 0, 0, 1], "t": [0, 0, 0]}"#,
    )
    .unwrap();
    cam
}

#[test]
fn tau_prints_the_kitti_value() {
    let dir = tempfile::tempdir().unwrap();
    let cam = kitti_camera(dir.path());
    let out = planedepth(&["tau", "--pathway-width", "5.5", "--camera", path(&cam)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.25");
}

#[test]
fn ground_prior_matches_camera_size() {
    let dir = tempfile::tempdir().unwrap();
    let cam = kitti_camera(dir.path());
    let out_path = dir.path().join("prior.pfm");
    let out = planedepth(&["ground-prior", "--camera", path(&cam), "--out", path(&out_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = read_pfm(&out_path).unwrap();
    assert_eq!(grid.shape(), (640, 192));
    assert!(!grid.is_valid(0, 0));
    assert!(grid.is_valid(320, 191));
}

#[test]
fn usage_errors_print_usage_and_exit_one() {
    let out = planedepth(&["tau", "--pathway-width", "5.5", "--camera"]);
    assert_eq!(out.status.code(), Some(1));
    let out = planedepth(&["--nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(planedepth(&["help"]).status.code(), Some(0));
}

#[test]
fn gradcheck_passes() {
    let out = planedepth(&["gradcheck", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("PASS").count(), 5);
}

#[test]
fn augment_is_reproducible_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let synth = planedepth(&["synth", "--out-dir", path(dir.path())]);
    assert_eq!(synth.status.code(), Some(0));
    let cam = dir.path().join("cam.json");
    let scene: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("scene.json")).unwrap()).unwrap();
    fs::write(&cam, scene["camera"].to_string()).unwrap();

    let mut outputs = Vec::new();
    for name in ["a.ppm", "b.ppm"] {
        let out_path = dir.path().join(name);
        let out = planedepth(&[
            "augment",
            "--seed",
            "11",
            "--camera",
            path(&cam),
            "--image",
            path(&dir.path().join("target.ppm")),
            "--image-out",
            path(&out_path),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read(&out_path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(read_ppm(&dir.path().join("a.ppm")).unwrap().shape(), (128, 96));

    let out = planedepth(&["augment", "--camera", path(&cam), "--yaw", "-40"]);
    assert_eq!(out.status.code(), Some(1));
    let out = planedepth(&["augment", "--camera", path(&cam), "--yaw", "-40", "--force"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn metrics_report_is_json_with_seed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(planedepth(&["synth", "--out-dir", path(dir.path())]).status.code(), Some(0));
    let gt = dir.path().join("target_depth.pfm");
    let prior = dir.path().join("ground_prior.pfm");
    let report = dir.path().join("metrics.json");
    let out = planedepth(&["metrics", "--pred", path(&prior), "--gt", path(&gt), "--out", path(&report), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["seed"], 3);
    let abs_rel = json["metrics"]["abs_rel"].as_f64().unwrap();
    assert!(abs_rel > 0.0 && abs_rel < 1.0);
}

#[test]
fn failures_leave_no_files_behind() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("optim.json");
    fs::write(&config, r#"{"step_size": -1.0}"#).unwrap();
    let report = dir.path().join("report.json");
    let out = planedepth(&["recover-scale", "--config", path(&config), "--report", path(&report)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!report.exists());

    let out = planedepth(&["recover-scale", "--report", path(&dir.path().join("missing/report.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn ablation_keeps_the_initial_scale() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("ablate.json");
    let out = planedepth(&["ablate", "--k0", "2", "--report", path(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["weights"]["lambda_const"], 0.0);
    let k = json["pose_scale"].as_f64().unwrap();
    assert!((k - 2.0).abs() < 0.04, "pose scale {k}");
}
