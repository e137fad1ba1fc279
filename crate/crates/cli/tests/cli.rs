use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hps_core::formats::{self, FrameMatches, PoseTrack};
use hps_core::localization::{body_to_vision_axes, CameraIntrinsics, CameraPoseEstimate, Correspondence};
use hps_core::metrics::MetricsReport;
use hps_core::Vec3;
use tempfile::TempDir;

fn hps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hps"))
        .args(args)
        .output()
        .expect("spawn hps")
}

fn run_ok(args: &[&str]) {
    let out = hps(args);
    assert!(
        out.status.success(),
        "hps {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates `spec_json` into `dir/sim` and returns that directory.
fn simulate(dir: &Path, spec_json: &str) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, spec_json).unwrap();
    let out = dir.join("sim");
    run_ok(&["simulate", "--spec", s(&spec), "--out-dir", s(&out)]);
    out
}

fn fuse(sim: &Path, out: &Path, extra: &[&str]) {
    let seq = sim.join("sequence.jsonl");
    let scene = sim.join("scene.ply");
    let mut args = vec!["fuse", "--sequence", s(&seq), "--scene", s(&scene), "--out", s(out)];
    args.extend_from_slice(extra);
    run_ok(&args);
}

fn evaluate(sim: &Path, result: &Path, report: &Path, extra: &[&str]) -> MetricsReport {
    let truth = sim.join("truth.jsonl");
    let scene = sim.join("scene.ply");
    let mut args = vec![
        "evaluate",
        "--result",
        s(result),
        "--truth",
        s(&truth),
        "--scene",
        s(&scene),
        "--report",
        s(report),
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
    formats::read_json(report).unwrap()
}

const CLEAN_SPEC: &str = r#"{"path": {"type": "circle", "radius": 5.0}, "duration": 3.0, "seed": 3}"#;

#[test]
fn clean_round_trip_has_sub_millimeter_chamfer() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), CLEAN_SPEC);
    for name in ["truth.jsonl", "sequence.jsonl", "scene.ply", "bundle.json"] {
        assert!(sim.join(name).is_file(), "{name}");
    }
    let result = dir.path().join("result.jsonl");
    let summary = dir.path().join("summary.json");
    fuse(&sim, &result, &["--summary", s(&summary)]);
    let report_path = dir.path().join("report.json");
    let report = evaluate(&sim, &result, &report_path, &["--summary", s(&summary)]);
    assert!(report.chamfer_cm < 0.1, "chamfer {}", report.chamfer_cm);
    assert!(report.dist_to_surface_cm.unwrap() < 0.1);
    assert!(report.pipeline.is_some());
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("distance_m,error_cm"));
    assert_eq!(PoseTrack::read(&result).unwrap().poses.len(), 91);
}

#[test]
fn missing_scene_fails_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), CLEAN_SPEC);
    let missing = dir.path().join("no_such_scene.ply");
    let out = hps(&[
        "fuse",
        "--sequence",
        s(&sim.join("sequence.jsonl")),
        "--scene",
        s(&missing),
        "--out",
        s(&dir.path().join("r.jsonl")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fuse"), "{err}");
    assert!(err.contains(s(&missing)), "{err}");
    assert!(!dir.path().join("r.jsonl").exists());
}

#[test]
fn malformed_sequence_reports_stage_and_line() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), CLEAN_SPEC);
    let seq = dir.path().join("bad.jsonl");
    let text = std::fs::read_to_string(sim.join("sequence.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = r#"{"timestamp": 0.1}"#;
    std::fs::write(&seq, lines.join("\n")).unwrap();
    let out = hps(&[
        "fuse",
        "--sequence",
        s(&seq),
        "--scene",
        s(&sim.join("scene.ply")),
        "--out",
        s(&dir.path().join("r.jsonl")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fuse: read sequence"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn evaluate_rejects_length_mismatch() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), CLEAN_SPEC);
    let truth = PoseTrack::from_sequence(&formats::read_sequence(&sim.join("truth.jsonl")).unwrap());
    let short = PoseTrack::new(truth.timestamps[..10].to_vec(), truth.poses[..10].to_vec()).unwrap();
    let result = dir.path().join("short.jsonl");
    short.write(&result).unwrap();
    let out = hps(&[
        "evaluate",
        "--result",
        s(&result),
        "--truth",
        s(&sim.join("truth.jsonl")),
        "--scene",
        s(&sim.join("scene.ply")),
        "--report",
        s(&dir.path().join("report.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("evaluate"));
}

#[test]
fn imu_baseline_drifts_while_hps_stays_bounded() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(
        dir.path(),
        r#"{"path": {"type": "line", "heading": 0.0}, "duration": 60.0, "rate_hz": 10.0, "seed": 11,
            "imu": {"yaw_drift": 0.02, "heading_offset": 0.3},
            "camera": {"position_noise": 0.02, "orientation_noise": 0.01,
                       "outlier_rate": 0.05, "outlier_magnitude": 1.0},
            "scene": {"corridor": true}}"#,
    );
    let drift_args = ["--milestones", "0,20,40,55", "--window-m", "10"];
    let mut curves = Vec::new();
    for baseline in ["imu", "hps"] {
        let result = dir.path().join(format!("{baseline}.jsonl"));
        fuse(&sim, &result, &["--baseline", baseline]);
        let report = evaluate(&sim, &result, &dir.path().join(format!("{baseline}.json")), &drift_args);
        assert_eq!(report.drift_curve.len(), 4);
        curves.push(report.drift_curve);
    }
    let (imu, hps) = (&curves[0], &curves[1]);
    for w in imu.windows(2) {
        assert!(w[1].error_cm > w[0].error_cm, "imu curve {imu:?}");
    }
    assert!(imu[3].error_cm > 10.0 * imu[0].error_cm, "imu curve {imu:?}");
    assert!(hps[3].error_cm <= 2.0 * hps[0].error_cm.max(0.5), "hps curve {hps:?}");
    assert!(hps.iter().all(|p| p.error_cm < 2.0), "hps curve {hps:?}");
}

/// Twelve scene points on a grid in front of the camera, observed exactly.
fn observe(cam: &CameraPoseEstimate, k: &CameraIntrinsics) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for (i, depth) in [3.0, 5.0, 7.0].into_iter().enumerate() {
        for (x, y) in [(-1.0, -0.5), (1.0, -0.5), (-0.5, 0.7), (0.8, 0.6)] {
            let pc = Vec3::new(x + 0.1 * i as f64, y, depth);
            let world = cam.rotation.matrix() * pc + cam.center;
            out.push(Correspondence::new(k.project(&pc).unwrap(), world));
        }
    }
    out
}

#[test]
fn localize_output_drives_fuse() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), CLEAN_SPEC);
    let truth = formats::read_sequence(&sim.join("truth.jsonl")).unwrap();
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
    let frames: Vec<FrameMatches> = truth
        .frames()
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let c = f.camera.unwrap();
            let cam = CameraPoseEstimate::new(body_to_vision_axes(&c.rotation), c.position, f.timestamp);
            let mut matches = observe(&cam, &k);
            if j == 40 {
                matches.truncate(3);
            }
            FrameMatches {
                timestamp: f.timestamp,
                matches,
            }
        })
        .collect();
    let matches = dir.path().join("matches.jsonl");
    formats::write_matches(&matches, &frames).unwrap();
    let intrinsics = dir.path().join("intrinsics.json");
    formats::write_json(&intrinsics, &k).unwrap();
    let traj_path = dir.path().join("trajectory.jsonl");
    run_ok(&[
        "localize",
        "--matches",
        s(&matches),
        "--intrinsics",
        s(&intrinsics),
        "--out",
        s(&traj_path),
        "--seed",
        "5",
    ]);
    let traj = formats::read_trajectory(&traj_path).unwrap();
    assert_eq!(traj.len(), truth.len());
    for (j, (e, f)) in traj.estimates().iter().zip(truth.frames()).enumerate() {
        if j == 40 {
            assert!(!e.valid);
            continue;
        }
        assert!(e.valid, "frame {j}");
        assert!((e.center - f.camera.unwrap().position).norm() < 1e-6, "frame {j}");
    }

    let result = dir.path().join("result.jsonl");
    fuse(&sim, &result, &["--trajectory", s(&traj_path)]);
    let report = evaluate(&sim, &result, &dir.path().join("report.json"), &[]);
    assert!(report.chamfer_cm < 0.1, "chamfer {}", report.chamfer_cm);
}
