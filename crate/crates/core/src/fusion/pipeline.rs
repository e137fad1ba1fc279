//! Initialization, batch optimization, stitching and baselines.

use std::f64::consts::PI;
use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{Batch, EnergyBreakdown, Objective};
use super::optimizer::{minimize, LbfgsSettings, MinimizeReport, Problem, StopReason};
use super::{Frame, FusionConfig, Sequence};
use crate::alignment::{
    align_frames, apply_alignment, apply_root_rotation, heading_correction_rotation,
    trajectory_tangents, AlignmentResult,
};
use crate::body::{camera_position, head_camera_offset, BodyPose, Skeleton, Theta, POSE_DOF};
use crate::error::{Error, Result};
use crate::localization::{classify_outliers, interpolate_outliers, CameraPoseEstimate, CameraTrajectory};
use crate::rotmath::{canonicalize, exp, interpolate, log, AxisAngle, Rotation, Vec3};
use crate::scene::SceneIndex;

/// Per-frame starting point of the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Initialization {
    pub theta: Vec<Theta>,
    pub trans: Vec<Vec3>,
    /// `true` where the camera estimate was missing or rejected.
    pub outliers: Vec<bool>,
}

impl Initialization {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn to_vars(&self) -> Vec<f64> {
        poses_to_vars(&self.theta, &self.trans)
    }
}

fn poses_to_vars(theta: &[Theta], trans: &[Vec3]) -> Vec<f64> {
    let mut vars = vec![0.0; POSE_DOF * theta.len()];
    for (j, (t, p)) in theta.iter().zip(trans).enumerate() {
        BodyPose::new(*t, *p).write_vars(&mut vars[j * POSE_DOF..(j + 1) * POSE_DOF]);
    }
    vars
}

fn vars_to_poses(vars: &[f64]) -> (Vec<Theta>, Vec<Vec3>) {
    vars.chunks_exact(POSE_DOF)
        .map(|c| {
            let p = BodyPose::from_vars(c);
            (p.theta, p.trans)
        })
        .unzip()
}

/// Outcome of optimizing one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionResult {
    pub theta: Vec<Theta>,
    pub trans: Vec<Vec3>,
    pub start: EnergyBreakdown,
    pub end: EnergyBreakdown,
    pub start_total: f64,
    pub end_total: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Total energy after each outer iteration.
    pub energies: Vec<f64>,
}

impl FusionResult {
    pub fn to_vars(&self) -> Vec<f64> {
        poses_to_vars(&self.theta, &self.trans)
    }
}

fn camera_trajectory(frames: &[Frame], rate_hz: f64) -> Result<CameraTrajectory> {
    let estimates = frames
        .iter()
        .map(|f| match f.camera {
            Some(c) => CameraPoseEstimate::new(c.rotation, c.position, f.timestamp),
            None => CameraPoseEstimate::invalid(f.timestamp),
        })
        .collect();
    CameraTrajectory::new(estimates, rate_hz)
}

fn horizontal(v: Vec3) -> Vec3 {
    Vec3::new(v.x, v.y, 0.0)
}

/// Root placement that puts the pose's camera point at `camera`.
fn translation_for_camera(sk: &Skeleton, theta: &Theta, camera: &Vec3) -> Vec3 {
    camera - camera_position(sk, &BodyPose::new(*theta, Vec3::zeros()))
}

/// Starting point for frames already registered to the scene frame.
///
/// Camera estimates are outlier-filtered; each root is turned about the
/// vertical so that the horizontal travel direction of the body's camera
/// point follows the filtered camera trajectory (stationary or ambiguous
/// frames reuse the last correction), and each translation places the
/// body's camera point on the filtered camera position. With a positive
/// `init_smoothing_s` those translations are then blended with the
/// heading-corrected IMU translation steps, which removes per-frame camera
/// noise while keeping the camera as the absolute reference.
pub fn initialize_batch(
    frames: &[Frame],
    rate_hz: f64,
    cfg: &FusionConfig,
    sk: &Skeleton,
) -> Result<Initialization> {
    let traj = camera_trajectory(frames, rate_hz)?;
    let outliers = classify_outliers(&traj, cfg.velocity_threshold)?;
    let filtered = interpolate_outliers(&traj, &outliers);
    let cam: Vec<Vec3> = filtered.estimates().iter().map(|e| e.center).collect();

    let body_cam: Vec<Vec3> = frames
        .iter()
        .map(|f| horizontal(camera_position(sk, &BodyPose::new(f.theta_imu, f.t_imu))))
        .collect();
    let cam_flat: Vec<Vec3> = cam.iter().map(|c| horizontal(*c)).collect();
    let v_imu = trajectory_tangents(&body_cam, cfg.gamma);
    let v_cam = trajectory_tangents(&cam_flat, cfg.gamma);

    let measured: Vec<Option<Rotation>> = v_imu
        .tangents
        .iter()
        .zip(&v_cam.tangents)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => heading_correction_rotation(a, b, cfg.heading).ok(),
            _ => None,
        })
        .collect();
    let corrections = if cfg.init_smoothing_s > 0.0 {
        // A chord from j to j + γ measures the heading around its midpoint;
        // the padded tail beyond the last full chord carries no measurement.
        let n = frames.len();
        let half = v_cam.gamma / 2;
        let mut samples = vec![Rotation::identity(); n];
        let mut weights = vec![0.0; n];
        for (j, m) in measured.iter().enumerate().take(n.saturating_sub(v_cam.gamma)) {
            if let Some(c) = m {
                samples[j + half] = *c;
                weights[j + half] = 1.0;
            }
        }
        smooth_yaws(&samples, &weights, cfg.init_smoothing_s * rate_hz)
    } else {
        let mut correction = Rotation::identity();
        measured
            .iter()
            .map(|m| {
                if let Some(c) = m {
                    correction = *c;
                }
                correction
            })
            .collect::<Vec<_>>()
    };

    let mut theta = Vec::with_capacity(frames.len());
    let mut trans = Vec::with_capacity(frames.len());
    for ((f, correction), c) in frames.iter().zip(&corrections).zip(&cam) {
        let t = apply_root_rotation(&f.theta_imu, correction);
        trans.push(translation_for_camera(sk, &t, c));
        theta.push(t);
    }
    if cfg.init_smoothing_s > 0.0 {
        let steps: Vec<Vec3> = frames
            .windows(2)
            .zip(&corrections)
            .map(|(w, c)| *c * (w[1].t_imu - w[0].t_imu))
            .collect();
        let weights: Vec<f64> = outliers.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect();
        let (stiffness, bias_stiffness) = blend_stiffness(cfg.init_smoothing_s * rate_hz);
        trans = fuse_odometry(&trans, &steps, &weights, stiffness, bias_stiffness);
    }
    Ok(Initialization {
        theta,
        trans,
        outliers,
    })
}

/// Least-squares blend of absolute positions and relative steps:
/// minimizes
/// `Σ w_j |t_j − a_j|² + k Σ |t_{j+1} − t_j − d_j − b_j|² + k_b Σ |b_{j+1} − b_j|²`
/// over positions `t` and a slowly varying step bias `b`, which absorbs a
/// drifting step source. Solved as one banded system shared by the axes.
fn fuse_odometry(
    anchors: &[Vec3],
    steps: &[Vec3],
    weights: &[f64],
    stiffness: f64,
    bias_stiffness: f64,
) -> Vec<Vec3> {
    let n = anchors.len();
    if n < 3 || weights.iter().filter(|&&w| w > 0.0).count() < 2 {
        return anchors.to_vec();
    }
    // Unknowns interleaved as t_0, b_0, t_1, b_1, ..., t_{n-1}.
    let size = 2 * n - 1;
    let mut band = vec![[0.0; BAND + 1]; size];
    let mut rhs = vec![Vec3::zeros(); size];
    let mut add = |i: usize, j: usize, v: f64| {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        band[hi][hi - lo] += if i == j { v } else { 0.5 * v };
    };
    for (j, w) in weights.iter().enumerate() {
        add(2 * j, 2 * j, *w);
        rhs[2 * j] += anchors[j] * *w;
    }
    for (j, d) in steps.iter().enumerate() {
        let idx = [2 * j, 2 * j + 1, 2 * j + 2];
        let coef = [-1.0, -1.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                add(idx[a], idx[b], stiffness * coef[a] * coef[b]);
            }
            rhs[idx[a]] += d * (stiffness * coef[a]);
        }
        // A tiny ridge keeps the bias determined where nothing else does.
        add(2 * j + 1, 2 * j + 1, 1e-12 * stiffness.max(1.0));
        if j + 1 < steps.len() {
            let (p, q) = (2 * j + 1, 2 * j + 3);
            add(p, p, bias_stiffness);
            add(q, q, bias_stiffness);
            add(p, q, -bias_stiffness);
            add(q, p, -bias_stiffness);
        }
    }
    let z = solve_banded(band, rhs);
    (0..n).map(|j| z[2 * j]).collect()
}

const BAND: usize = 2;

/// Solves a symmetric positive definite system given by its lower band
/// (`band[i][d]` holds entry `(i, i − d)`) by banded Cholesky.
fn solve_banded(mut band: Vec<[f64; BAND + 1]>, mut rhs: Vec<Vec3>) -> Vec<Vec3> {
    let n = band.len();
    for i in 0..n {
        for j in i.saturating_sub(BAND)..=i {
            let mut s = band[i][i - j];
            for k in i.saturating_sub(BAND)..j {
                s -= band[i][i - k] * band[j][j - k];
            }
            band[i][i - j] = if i == j { s.sqrt() } else { s / band[j][0] };
        }
    }
    for i in 0..n {
        for k in i.saturating_sub(BAND)..i {
            let v = rhs[k] * band[i][i - k];
            rhs[i] -= v;
        }
        rhs[i] /= band[i][0];
    }
    for i in (0..n).rev() {
        for k in i + 1..(i + BAND + 1).min(n) {
            let v = rhs[k] * band[k][k - i];
            rhs[i] -= v;
        }
        rhs[i] /= band[i][0];
    }
    rhs
}

/// Step and bias stiffness for a blend spanning about `frames` frames;
/// the bias may vary over ten times that span.
fn blend_stiffness(frames: f64) -> (f64, f64) {
    let k = frames * frames;
    (k, k * (10.0 * frames).powi(2))
}

/// Low-pass filter of vertical-axis corrections over roughly `frames`
/// frames, following a constant drift rate; only entries with positive
/// weight act as measurements.
fn smooth_yaws(corrections: &[Rotation], weights: &[f64], frames: f64) -> Vec<Rotation> {
    let mut unwrapped = Vec::with_capacity(corrections.len());
    let mut last = 0.0;
    for (c, &w) in corrections.iter().zip(weights) {
        if w > 0.0 {
            let m = c.matrix();
            let yaw = m[(1, 0)].atan2(m[(0, 0)]);
            last = yaw + (2.0 * PI) * ((last - yaw) / (2.0 * PI)).round();
        }
        unwrapped.push(Vec3::new(last, 0.0, 0.0));
    }
    let steps = vec![Vec3::zeros(); corrections.len().saturating_sub(1)];
    let (stiffness, bias_stiffness) = blend_stiffness(frames);
    fuse_odometry(&unwrapped, &steps, weights, stiffness, bias_stiffness)
        .iter()
        .map(|v| Rotation::rot_z(v.x))
        .collect()
}

struct BatchProblem<'a> {
    objective: Objective<'a>,
}

impl Problem for BatchProblem<'_> {
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.objective.value_and_gradient(x, grad)
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        self.objective.value(x)
    }

    fn refresh(&mut self, x: &[f64]) -> bool {
        self.objective.refresh_targets(x)
    }

    /// Wraps root axis-angles that left the ball of radius π. Only the root
    /// is free of the articulation prior, so only it can drift there.
    fn canonicalize(&mut self, x: &mut [f64]) -> bool {
        let mut changed = false;
        for frame in x.chunks_exact_mut(POSE_DOF) {
            let root = Vec3::new(frame[0], frame[1], frame[2]);
            if root.norm() > PI {
                frame[..3].copy_from_slice(canonicalize(root).as_slice());
                changed = true;
            }
        }
        changed
    }
}

/// Minimizes the batch energy from `init` (a 75-per-frame variable vector).
pub fn optimize_batch(
    batch: &Batch,
    init: &[f64],
    cfg: &FusionConfig,
    sk: &Skeleton,
    scene: &SceneIndex,
    r_hc: &Rotation,
) -> Result<FusionResult> {
    cfg.validate()?;
    if init.len() != POSE_DOF * batch.len() {
        return Err(Error::DimensionMismatch {
            expected: POSE_DOF * batch.len(),
            got: init.len(),
        });
    }
    let mut problem = BatchProblem {
        objective: Objective::new(sk, scene, batch, cfg, r_hc),
    };
    problem.objective.refresh_targets(init);
    let start = problem.objective.breakdown(init);
    if !start.is_finite() {
        return Err(Error::NonFiniteEnergy(format!("initial energy {start:?}")));
    }
    let mut x = init.to_vec();
    let settings = LbfgsSettings {
        max_iterations: cfg.max_iterations,
        grad_tolerance: cfg.grad_tolerance,
        history: cfg.history,
        ..Default::default()
    };
    let MinimizeReport {
        iterations,
        converged,
        stop,
        energies,
    } = minimize(&mut problem, &mut x, &settings);
    if stop == StopReason::NonFinite {
        return Err(Error::NonFiniteEnergy(format!(
            "energy became non-finite after {iterations} iterations"
        )));
    }
    problem.objective.refresh_targets(&x);
    let end = problem.objective.breakdown(&x);
    let (theta, trans) = vars_to_poses(&x);
    Ok(FusionResult {
        theta,
        trans,
        start_total: start.total(cfg),
        end_total: end.total(cfg),
        start,
        end,
        iterations,
        converged,
        stop,
        energies,
    })
}

/// Frame ranges of length `batch_len` advancing by `batch_len − overlap`;
/// the last range is aligned to the end of the sequence. Sequences no
/// longer than one batch form a single range.
pub fn batch_ranges(n: usize, batch_len: usize, overlap: usize) -> Vec<Range<usize>> {
    if n <= batch_len {
        return vec![0..n];
    }
    let stride = batch_len.saturating_sub(overlap).max(1);
    let mut ranges = Vec::new();
    let mut start = 0;
    while start + batch_len < n {
        ranges.push(start..start + batch_len);
        start += stride;
    }
    ranges.push(n - batch_len..n);
    ranges
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchSummary {
    pub start_frame: usize,
    pub end_frame: usize,
    pub start: EnergyBreakdown,
    pub end: EnergyBreakdown,
    pub start_total: f64,
    pub end_total: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
}

/// Wall-clock seconds spent per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub alignment_s: f64,
    pub initialization_s: f64,
    pub optimization_s: f64,
    pub total_s: f64,
}

/// Per-frame result over a whole sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceResult {
    pub timestamps: Vec<f64>,
    pub theta: Vec<Theta>,
    pub trans: Vec<Vec3>,
    pub alignment: AlignmentResult,
    /// Index of the frame used for registration and calibration.
    pub reference_frame: usize,
    pub head_to_camera: Rotation,
    pub outliers: Vec<bool>,
    pub batches: Vec<BatchSummary>,
    pub timings: StageTimings,
}

impl SequenceResult {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn poses(&self) -> Vec<BodyPose> {
        self.theta
            .iter()
            .zip(&self.trans)
            .map(|(t, p)| BodyPose::new(*t, *p))
            .collect()
    }
}

struct Registered {
    seq: Sequence,
    alignment: AlignmentResult,
    reference: usize,
    head_to_camera: Rotation,
    outliers: Vec<bool>,
}

/// Registers the IMU stream at the first camera inlier and calibrates the
/// head-to-camera rotation there.
fn register(seq: &Sequence, cfg: &FusionConfig, sk: &Skeleton) -> Result<Registered> {
    let traj = camera_trajectory(seq.frames(), seq.rate_hz())?;
    let outliers = classify_outliers(&traj, cfg.velocity_threshold)?;
    let reference = outliers.iter().position(|&o| !o).expect("classification keeps two inliers");
    let frame = &seq.frames()[reference];
    let camera = frame.camera.expect("inliers have a camera estimate").rotation;
    let alignment = align_frames(&frame.theta_imu, &camera, sk);
    let aligned = apply_alignment(seq, &alignment.rotation);
    let head_to_camera = head_camera_offset(sk, &aligned.frames()[reference].theta_imu, &camera);
    Ok(Registered {
        seq: aligned,
        alignment,
        reference,
        head_to_camera,
        outliers,
    })
}

/// Head-to-camera rotation averaged over every inlier frame of the
/// initialized sequence, starting from the single-frame calibration.
/// Averaging keeps one noisy camera orientation from becoming a constant
/// tilt of the whole body.
fn refine_head_to_camera(frames: &[Frame], init: &Initialization, start: &Rotation, sk: &Skeleton) -> Rotation {
    let samples: Vec<Rotation> = frames
        .iter()
        .zip(&init.theta)
        .zip(&init.outliers)
        .filter(|(_, &o)| !o)
        .filter_map(|((f, theta), _)| f.camera.map(|c| head_camera_offset(sk, theta, &c.rotation)))
        .collect();
    if samples.is_empty() {
        return *start;
    }
    let mut mean = *start;
    for _ in 0..5 {
        let step = samples
            .iter()
            .map(|r| log(&(mean.transpose() * *r)).map(|a| a.0).unwrap_or_else(|_| Vec3::zeros()))
            .sum::<Vec3>()
            / samples.len() as f64;
        mean = mean * exp(AxisAngle(step));
        if step.norm() < 1e-12 {
            break;
        }
    }
    mean
}

fn batch_data(frames: &[Frame], outliers: &[bool]) -> Batch {
    Batch {
        theta_imu: frames.iter().map(|f| f.theta_imu).collect(),
        contacts: frames.iter().map(|f| f.contacts).collect(),
        camera_rotations: frames
            .iter()
            .zip(outliers)
            .map(|(f, &o)| if o { None } else { f.camera.map(|c| c.rotation) })
            .collect(),
    }
}

fn blend_theta(a: &Theta, b: &Theta, s: f64) -> Theta {
    let mut out = *a;
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
        let r = interpolate(&exp(AxisAngle(*x)), &exp(AxisAngle(*y)), s);
        *o = log(&r).expect("interpolated rotation is valid").0;
    }
    out
}

/// Full pipeline: registration, calibration, outlier filtering,
/// initialization, per-batch optimization and linear blending of the
/// frames shared by consecutive batches.
pub fn fuse_sequence(
    seq: &Sequence,
    scene: &SceneIndex,
    cfg: &FusionConfig,
    sk: &Skeleton,
) -> Result<SequenceResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let reg = register(seq, cfg, sk)?;
    let t1 = Instant::now();
    let init = initialize_batch(reg.seq.frames(), seq.rate_hz(), cfg, sk)?;
    let head_to_camera = refine_head_to_camera(reg.seq.frames(), &init, &reg.head_to_camera, sk);
    let t2 = Instant::now();

    let frames = reg.seq.frames();
    let ranges = batch_ranges(frames.len(), cfg.batch_len, cfg.overlap);
    let results: Vec<FusionResult> = ranges
        .par_iter()
        .map(|r| {
            let batch = batch_data(&frames[r.clone()], &init.outliers[r.clone()]);
            let vars = poses_to_vars(&init.theta[r.clone()], &init.trans[r.clone()]);
            optimize_batch(&batch, &vars, cfg, sk, scene, &head_to_camera)
        })
        .collect::<Result<_>>()?;
    let t3 = Instant::now();

    let n = frames.len();
    let mut theta = init.theta.clone();
    let mut trans = init.trans.clone();
    let mut covered_to = 0usize;
    for (range, res) in ranges.iter().zip(&results) {
        let shared = covered_to.saturating_sub(range.start);
        for (k, j) in range.clone().enumerate() {
            if k < shared {
                // Weight of the later batch ramps from 1/(m+1) to m/(m+1).
                let s = (k + 1) as f64 / (shared + 1) as f64;
                theta[j] = blend_theta(&theta[j], &res.theta[k], s);
                trans[j] = trans[j] * (1.0 - s) + res.trans[k] * s;
            } else {
                theta[j] = res.theta[k];
                trans[j] = res.trans[k];
            }
        }
        covered_to = range.end;
    }
    debug_assert_eq!(covered_to, n);

    let batches = ranges
        .iter()
        .zip(&results)
        .map(|(r, res)| BatchSummary {
            start_frame: r.start,
            end_frame: r.end,
            start: res.start,
            end: res.end,
            start_total: res.start_total,
            end_total: res.end_total,
            iterations: res.iterations,
            converged: res.converged,
            stop: res.stop,
        })
        .collect();
    let t4 = Instant::now();
    Ok(SequenceResult {
        timestamps: seq.timestamps(),
        theta,
        trans,
        alignment: reg.alignment,
        reference_frame: reg.reference,
        head_to_camera,
        outliers: init.outliers,
        batches,
        timings: StageTimings {
            alignment_s: (t1 - t0).as_secs_f64(),
            initialization_s: (t2 - t1).as_secs_f64(),
            optimization_s: (t3 - t2).as_secs_f64(),
            total_s: (t4 - t0).as_secs_f64(),
        },
    })
}

/// Comparison methods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Registered IMU pose and translation, anchored so the body's camera
    /// point matches the camera at the reference frame.
    Imu,
    /// Registered IMU pose with the raw camera positions as translation;
    /// frames without a camera estimate are interpolated.
    ImuCam,
    /// As `ImuCam` with velocity-filtered camera positions.
    ImuCamFiltered,
    /// The full optimization without scene terms.
    NoScene,
    /// The full optimization.
    #[default]
    Hps,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::Imu,
        Baseline::ImuCam,
        Baseline::ImuCamFiltered,
        Baseline::NoScene,
        Baseline::Hps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Imu => "imu",
            Baseline::ImuCam => "imu-cam",
            Baseline::ImuCamFiltered => "imu-cam-filtered",
            Baseline::NoScene => "no-scene",
            Baseline::Hps => "hps",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown baseline {s:?}")))
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs one of the comparison methods over a whole sequence.
pub fn run_baseline(
    seq: &Sequence,
    scene: &SceneIndex,
    cfg: &FusionConfig,
    sk: &Skeleton,
    baseline: Baseline,
) -> Result<SequenceResult> {
    match baseline {
        Baseline::Hps => return fuse_sequence(seq, scene, cfg, sk),
        Baseline::NoScene => {
            let cfg = FusionConfig {
                w_sc: 0.0,
                ..cfg.clone()
            };
            return fuse_sequence(seq, scene, &cfg, sk);
        }
        _ => {}
    }
    cfg.validate()?;
    let t0 = Instant::now();
    let reg = register(seq, cfg, sk)?;
    let frames = reg.seq.frames();
    let theta: Vec<Theta> = frames.iter().map(|f| f.theta_imu).collect();
    let trans: Vec<Vec3> = match baseline {
        Baseline::Imu => {
            let r = reg.reference;
            let cam = frames[r].camera.expect("reference has a camera").position;
            let anchor = cam - camera_position(sk, &BodyPose::new(theta[r], frames[r].t_imu));
            frames.iter().map(|f| f.t_imu + anchor).collect()
        }
        _ => {
            let traj = camera_trajectory(frames, seq.rate_hz())?;
            let mask: Vec<bool> = if baseline == Baseline::ImuCam {
                traj.estimates().iter().map(|e| !e.valid).collect()
            } else {
                reg.outliers.clone()
            };
            let filled = interpolate_outliers(&traj, &mask);
            filled
                .estimates()
                .iter()
                .zip(&theta)
                .map(|(e, t)| translation_for_camera(sk, t, &e.center))
                .collect()
        }
    };
    let total = t0.elapsed().as_secs_f64();
    Ok(SequenceResult {
        timestamps: seq.timestamps(),
        theta,
        trans,
        alignment: reg.alignment,
        reference_frame: reg.reference,
        head_to_camera: reg.head_to_camera,
        outliers: reg.outliers,
        batches: Vec::new(),
        timings: StageTimings {
            alignment_s: total,
            total_s: total,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_and_overlap() {
        assert_eq!(batch_ranges(100, 300, 30), vec![0..100]);
        assert_eq!(batch_ranges(300, 300, 30), vec![0..300]);
        assert_eq!(batch_ranges(570, 300, 30), vec![0..300, 270..570]);
        let r = batch_ranges(900, 300, 30);
        assert_eq!(r, vec![0..300, 270..570, 540..840, 600..900]);
        for n in [301, 555, 1000, 1234] {
            let r = batch_ranges(n, 300, 30);
            assert_eq!(r[0].start, 0);
            assert_eq!(r.last().unwrap().end, n);
            for w in r.windows(2) {
                assert!(w[1].start < w[0].end && w[0].end - w[1].start >= 30);
            }
        }
    }

    #[test]
    fn odometry_blend() {
        let truth: Vec<Vec3> = (0..50).map(|j| Vec3::new(0.03 * j as f64, (0.1 * j as f64).sin(), 0.9)).collect();
        let steps: Vec<Vec3> = truth.windows(2).map(|w| w[1] - w[0]).collect();
        let noisy: Vec<Vec3> = truth
            .iter()
            .enumerate()
            .map(|(j, p)| p + Vec3::new(0.02, -0.01, 0.015) * if j % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let mut weights = vec![1.0; 50];
        weights[7] = 0.0;
        let fused = fuse_odometry(&noisy, &steps, &weights, 400.0, 4e6);
        for (a, b) in fused.iter().zip(&truth) {
            assert!((a - b).norm() < 5e-3, "{a} vs {b}");
        }
        for w in fused.windows(2).zip(&steps) {
            assert!((w.0[1] - w.0[0] - w.1).norm() < 1e-3);
        }
        let exact = fuse_odometry(&truth, &steps, &vec![1.0; 50], 1e6, 1e9);
        assert!(exact.iter().zip(&truth).all(|(a, b)| (a - b).norm() < 1e-9));
        let raw = fuse_odometry(&noisy, &steps, &vec![1.0; 50], 0.0, 0.0);
        assert!(raw.iter().zip(&noisy).all(|(a, b)| (a - b).norm() < 1e-12));

        // A constant bias on the steps is absorbed.
        let biased: Vec<Vec3> = steps.iter().map(|d| d + Vec3::new(0.004, -0.002, 0.0)).collect();
        let fused = fuse_odometry(&truth, &biased, &vec![1.0; 50], 1e4, 1e8);
        assert!(fused.iter().zip(&truth).all(|(a, b)| (a - b).norm() < 1e-9));
    }

    #[test]
    fn baseline_names_round_trip() {
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
            assert_eq!(serde_json::to_value(b).unwrap(), b.name());
        }
        assert!("kalman".parse::<Baseline>().is_err());
    }

    #[test]
    fn blend_endpoints() {
        let mut a = crate::body::zero_theta();
        let mut b = a;
        a[3] = Vec3::new(0.2, 0.0, 0.0);
        b[3] = Vec3::new(0.6, 0.0, 0.0);
        let mid = blend_theta(&a, &b, 0.5);
        assert!((mid[3] - Vec3::new(0.4, 0.0, 0.0)).norm() < 1e-12);
        assert!((blend_theta(&a, &b, 0.0)[3] - a[3]).norm() < 1e-12);
    }
}
