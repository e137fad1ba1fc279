use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hps_core::formats::{self, FrameMatches, PoseTrack};
use hps_core::fusion::{run_baseline, Baseline, CameraObservation, FusionConfig, Sequence};
use hps_core::localization::{
    ransac_localize, vision_to_body_axes, CameraPoseEstimate, CameraTrajectory, DEFAULT_ITERATIONS,
    DEFAULT_THRESHOLD_PX,
};
use hps_core::metrics::{self, DriftSettings};
use hps_core::simkit::{self, SimSpec};
use hps_core::scene::build_index;
use hps_core::{SceneIndex, ScenePointCloud, Skeleton};

#[derive(Parser)]
#[command(name = "hps", version, about = "Body-mounted IMU and camera fusion against a scene scan")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic walk: clean truth, corrupted sequence and scene.
    Simulate(SimulateArgs),
    /// Localize every query frame from its 2D-3D matches.
    Localize(LocalizeArgs),
    /// Fuse a sequence with the scene and write optimized poses.
    Fuse(FuseArgs),
    /// Compare a result with ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Receives truth.jsonl, sequence.jsonl, scene.ply and bundle.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Correspondences (JSON lines, one query frame per line).
    #[arg(long)]
    matches: PathBuf,
    /// Camera intrinsics (JSON with fx, fy, cx, cy).
    #[arg(long)]
    intrinsics: PathBuf,
    /// Camera trajectory output (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Inlier threshold in pixels.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_PX)]
    threshold_px: f64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: usize,
    /// Frame `j` uses RANSAC seed `seed + j`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FuseArgs {
    /// Sensor sequence (JSON lines).
    #[arg(long)]
    sequence: PathBuf,
    /// Scene point cloud (.ply or .json).
    #[arg(long)]
    scene: PathBuf,
    /// Fusion config (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Result output (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Comparison method instead of the full fusion.
    #[arg(long, default_value = "hps")]
    baseline: Baseline,
    /// Camera trajectory from `localize`, replacing the sequence's camera
    /// entries frame by frame.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Writes registration, batch and timing details (JSON).
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Result (JSON lines from `fuse`).
    #[arg(long)]
    result: PathBuf,
    /// Ground-truth sequence (JSON lines); its poses and contact flags are used.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Metrics report output (JSON).
    #[arg(long)]
    report: PathBuf,
    /// Drift curve output; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    drift_csv: Option<PathBuf>,
    /// Distances (m) at which the drift curve is sampled.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 70.0, 200.0, 380.0])]
    milestones: Vec<f64>,
    /// Width (m) of the distance window averaged around each milestone.
    #[arg(long, default_value_t = 0.0)]
    window_m: f64,
    /// Summary written by `fuse --summary`; its stage timings are copied
    /// into the report.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Localize(a) => localize(&a),
        Command::Fuse(a) => fuse(&a),
        Command::Evaluate(a) => evaluate(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_skeleton(path: Option<&Path>) -> Result<Skeleton> {
    match path {
        Some(p) => Skeleton::load(p).with_context(|| format!("load skeleton {}", p.display())),
        None => Ok(Skeleton::smpl_default()),
    }
}

fn load_scene(path: &Path) -> Result<SceneIndex> {
    let cloud = ScenePointCloud::load(path).with_context(|| format!("load scene {}", path.display()))?;
    build_index(cloud).with_context(|| format!("index scene {}", path.display()))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let text = formats::read_text(&args.spec).context("simulate: read spec")?;
    let spec = SimSpec::from_json_str(&text).with_context(|| format!("simulate: parse spec {}", args.spec.display()))?;
    let sk = load_skeleton(args.skeleton.as_deref()).context("simulate")?;
    let bundle = simkit::generate_with_skeleton(&spec, &sk).context("simulate: generate")?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("simulate: create output directory {}", args.out_dir.display()))?;
    let dir = &args.out_dir;
    formats::write_sequence(&dir.join("truth.jsonl"), &bundle.clean).context("simulate: write truth")?;
    formats::write_sequence(&dir.join("sequence.jsonl"), &bundle.corrupted).context("simulate: write sequence")?;
    bundle.scene.save(dir.join("scene.ply")).context("simulate: write scene")?;
    let outliers: Vec<usize> = bundle
        .outlier_frames
        .iter()
        .enumerate()
        .filter_map(|(j, &o)| o.then_some(j))
        .collect();
    let meta = json!({
        "spec": spec,
        "frames": bundle.clean.len(),
        "rate_hz": bundle.clean.rate_hz(),
        "scene_points": bundle.scene.len(),
        "head_to_camera_q": bundle.head_to_camera.to_quaternion_wxyz(),
        "outlier_frames": outliers,
    });
    formats::write_json(&dir.join("bundle.json"), &meta).context("simulate: write bundle summary")?;
    eprintln!(
        "simulate: {} frames, {} scene points -> {}",
        bundle.clean.len(),
        bundle.scene.len(),
        dir.display()
    );
    Ok(())
}

fn localize(args: &LocalizeArgs) -> Result<()> {
    let k = formats::read_intrinsics(&args.intrinsics).context("localize: read intrinsics")?;
    let frames: Vec<FrameMatches> = formats::read_matches(&args.matches).context("localize: read matches")?;
    if frames.is_empty() {
        bail!("localize: {} holds no query frames", args.matches.display());
    }
    let mut failures = 0;
    let estimates: Vec<CameraPoseEstimate> = frames
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let outcome = ransac_localize(&f.matches, &k, args.threshold_px, args.iterations, args.seed + j as u64);
            match outcome {
                Ok(o) if o.estimate.valid => CameraPoseEstimate {
                    timestamp: f.timestamp,
                    ..o.estimate
                },
                _ => {
                    failures += 1;
                    CameraPoseEstimate::invalid(f.timestamp)
                }
            }
        })
        .collect();
    let traj = CameraTrajectory::from_timestamps(estimates).context("localize: assemble trajectory")?;
    formats::write_trajectory(&args.out, &traj).context("localize: write trajectory")?;
    eprintln!("localize: {} frames, {} failed", frames.len(), failures);
    Ok(())
}

/// Replaces camera observations with a `localize` trajectory (vision axes
/// converted to body axes). Frames are matched by timestamp.
fn attach_trajectory(seq: &Sequence, traj: &CameraTrajectory) -> Result<Sequence> {
    if traj.len() != seq.len() {
        bail!("trajectory has {} frames, sequence has {}", traj.len(), seq.len());
    }
    let mut frames = seq.frames().to_vec();
    for (j, (f, e)) in frames.iter_mut().zip(traj.estimates()).enumerate() {
        if (f.timestamp - e.timestamp).abs() > 1e-6 {
            bail!(
                "frame {j}: trajectory timestamp {} does not match sequence timestamp {}",
                e.timestamp,
                f.timestamp
            );
        }
        f.camera = e.valid.then(|| CameraObservation {
            rotation: vision_to_body_axes(&e.rotation),
            position: e.center,
        });
    }
    Ok(Sequence::new(frames, seq.rate_hz())?)
}

fn fuse(args: &FuseArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => formats::read_config(p).context("fuse: read config")?,
        None => FusionConfig::default(),
    };
    let sk = load_skeleton(args.skeleton.as_deref()).context("fuse")?;
    let mut seq = formats::read_sequence(&args.sequence).context("fuse: read sequence")?;
    if let Some(p) = &args.trajectory {
        let traj = formats::read_trajectory(p).context("fuse: read trajectory")?;
        seq = attach_trajectory(&seq, &traj).with_context(|| format!("fuse: attach trajectory {}", p.display()))?;
    }
    let scene = load_scene(&args.scene).context("fuse")?;
    let result = run_baseline(&seq, &scene, &cfg, &sk, args.baseline)
        .with_context(|| format!("fuse: {} pipeline", args.baseline))?;
    PoseTrack::new(result.timestamps.clone(), result.poses())?
        .write(&args.out)
        .context("fuse: write result")?;
    if let Some(p) = &args.summary {
        let summary = json!({
            "baseline": args.baseline,
            "frames": result.len(),
            "reference_frame": result.reference_frame,
            "alignment_q": result.alignment.rotation.to_quaternion_wxyz(),
            "head_to_camera_q": result.head_to_camera.to_quaternion_wxyz(),
            "outlier_count": result.outliers.iter().filter(|&&o| o).count(),
            "batches": result.batches,
            "timings": result.timings,
        });
        formats::write_json(p, &summary).context("fuse: write summary")?;
    }
    eprintln!(
        "fuse: {} frames, {} batches, {:.2} s",
        result.len(),
        result.batches.len(),
        result.timings.total_s
    );
    Ok(())
}

fn default_csv_path(report: &Path) -> PathBuf {
    let csv = report.with_extension("csv");
    if csv == report {
        report.with_extension("drift.csv")
    } else {
        csv
    }
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let sk = load_skeleton(args.skeleton.as_deref()).context("evaluate")?;
    let result = PoseTrack::read(&args.result).context("evaluate: read result")?;
    let truth_seq = formats::read_sequence(&args.truth).context("evaluate: read truth")?;
    let truth = PoseTrack::from_sequence(&truth_seq);
    if result.poses.len() != truth.poses.len() {
        bail!(
            "evaluate: result has {} frames, truth has {}",
            result.poses.len(),
            truth.poses.len()
        );
    }
    let scene = load_scene(&args.scene).context("evaluate")?;
    let contacts: Vec<[bool; 4]> = truth_seq.frames().iter().map(|f| f.contacts).collect();
    let drift = DriftSettings {
        milestones_m: args.milestones.clone(),
        window_m: args.window_m,
    };
    let mut report = metrics::evaluate(&result.poses, &truth.poses, &contacts, &scene, &sk, &drift)
        .context("evaluate: metrics")?;
    if let Some(p) = &args.summary {
        let summary: serde_json::Value = formats::read_json(p).context("evaluate: read summary")?;
        let timings = summary
            .get("timings")
            .cloned()
            .with_context(|| format!("evaluate: {} has no timings", p.display()))?;
        report.pipeline = Some(
            serde_json::from_value(timings).with_context(|| format!("evaluate: timings in {}", p.display()))?,
        );
    }
    formats::write_json(&args.report, &report).context("evaluate: write report")?;
    let csv_path = args.drift_csv.clone().unwrap_or_else(|| default_csv_path(&args.report));
    formats::write_text(&csv_path, &metrics::drift_csv(&report.drift_curve)).context("evaluate: write drift curve")?;
    eprintln!(
        "evaluate: chamfer {:.3} cm, report {}, drift curve {}",
        report.chamfer_cm,
        args.report.display(),
        csv_path.display()
    );
    Ok(())
}
