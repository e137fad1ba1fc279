use hps_core::formats::{self, PoseTrack};
use hps_core::fusion::{run_baseline, Baseline, FusionConfig};
use hps_core::metrics::{evaluate, DriftSettings};
use hps_core::scene::build_index;
use hps_core::simkit::{generate, ground_truth_poses, CameraCorruption, ImuCorruption, PathSpec, SimSpec};
use hps_core::{BodyPose, Skeleton};
use tempfile::TempDir;

fn noisy_circle() -> SimSpec {
    SimSpec {
        path: PathSpec::Circle { radius: 6.0 },
        duration: 20.0,
        imu: ImuCorruption {
            yaw_drift: 0.01,
            translation_drift: 0.01,
            heading_offset: 0.5,
            ..Default::default()
        },
        camera: CameraCorruption {
            position_noise: 0.02,
            orientation_noise: 0.01,
            outlier_rate: 0.05,
            outlier_magnitude: 1.0,
            dropout_rate: 0.05,
        },
        seed: 21,
        ..Default::default()
    }
}

fn rmse_cm(a: &[BodyPose], b: &[BodyPose]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (p.trans - q.trans).norm_squared()).sum();
    (sum / a.len() as f64).sqrt() * 100.0
}

#[test]
fn files_round_trip_exactly() {
    let bundle = generate(&SimSpec {
        duration: 2.0,
        ..noisy_circle()
    })
    .unwrap();
    let dir = TempDir::new().unwrap();
    let seq_path = dir.path().join("sequence.jsonl");
    formats::write_sequence(&seq_path, &bundle.corrupted).unwrap();
    let back = formats::read_sequence(&seq_path).unwrap();
    assert_eq!(back.len(), bundle.corrupted.len());
    for (a, b) in back.frames().iter().zip(bundle.corrupted.frames()) {
        assert_eq!(a.timestamp, b.timestamp);
        assert_eq!(a.theta_imu, b.theta_imu);
        assert_eq!(a.t_imu, b.t_imu);
        assert_eq!(a.contacts, b.contacts);
        assert_eq!(a.camera.is_some(), b.camera.is_some());
        if let (Some(x), Some(y)) = (a.camera, b.camera) {
            assert_eq!(x.position, y.position);
            assert!((x.rotation.matrix() - y.rotation.matrix()).abs().max() < 1e-12);
        }
    }

    let scene_path = dir.path().join("scene.ply");
    bundle.scene.save(&scene_path).unwrap();
    let scene = hps_core::ScenePointCloud::load(&scene_path).unwrap();
    assert_eq!(scene.points(), bundle.scene.points());

    let track = PoseTrack::new(bundle.clean.timestamps(), ground_truth_poses(&bundle)).unwrap();
    let track_path = dir.path().join("result.jsonl");
    track.write(&track_path).unwrap();
    assert_eq!(PoseTrack::read(&track_path).unwrap(), track);
}

#[test]
fn fusion_beats_camera_baselines_and_is_deterministic() {
    let bundle = generate(&noisy_circle()).unwrap();
    let scene = build_index(bundle.scene.clone()).unwrap();
    let sk = Skeleton::smpl_default();
    let cfg = FusionConfig::default();
    let truth = ground_truth_poses(&bundle);
    let run = |b: Baseline| run_baseline(&bundle.corrupted, &scene, &cfg, &sk, b).unwrap();

    let hps = run(Baseline::Hps);
    let raw = rmse_cm(&run(Baseline::ImuCam).poses(), &truth);
    let filtered = rmse_cm(&run(Baseline::ImuCamFiltered).poses(), &truth);
    let fused = rmse_cm(&hps.poses(), &truth);
    assert!(fused < filtered && filtered < raw, "hps {fused}, filtered {filtered}, raw {raw}");
    assert!(fused < 2.0, "hps {fused} cm");
    assert!(hps.batches.len() >= 2);
    assert!(hps.batches.iter().all(|b| b.end_total <= b.start_total));

    let again = run(Baseline::Hps);
    assert_eq!(again.theta, hps.theta);
    assert_eq!(again.trans, hps.trans);

    let contacts: Vec<[bool; 4]> = bundle.clean.frames().iter().map(|f| f.contacts).collect();
    let settings = DriftSettings {
        milestones_m: vec![0.0, 10.0, 19.0],
        window_m: 2.0,
    };
    let report = evaluate(&hps.poses(), &truth, &contacts, &scene, &sk, &settings).unwrap();
    assert_eq!(report.drift_curve.len(), 3);
    assert!(report.drift_curve.windows(2).all(|w| w[0].distance_m <= w[1].distance_m));
    assert!(report.dist_to_surface_cm.unwrap() < 0.5);
}
