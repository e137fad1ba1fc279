//! Synthetic ground truth: walking or standing subjects with exactly planted
//! feet, a flat scene, and configurable IMU drift and camera corruption.
//!
//! Legs are posed by analytic two-link inverse kinematics so that stance
//! feet stay on their footprints to rounding error. The gait is flat-footed:
//! toe and heel of a foot make and break contact together, and the feet
//! alternate with a double-support phase (no flight). Contact flags are
//! recomputed from the generated marker positions, standing in for the
//! proprietary IMU contact detector.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::alignment::yaw_rotation;
use crate::body::{zero_theta, BodyPose, FootPart, Skeleton, Theta, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::fusion::{CameraObservation, Frame, Sequence};
use crate::rotmath::{exp_matrix, log_matrix, Mat3, Rotation, Vec3};
use crate::scene::ScenePointCloud;

/// Ground path followed by the pelvis, starting at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PathSpec {
    /// Straight line with the given heading (radians from +x).
    Line { heading: f64 },
    /// Counter-clockwise circle starting towards +x.
    Circle { radius: f64 },
    /// Polyline through the points (meters); extrapolated past both ends.
    Waypoints { points: Vec<[f64; 2]> },
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec::Line { heading: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSpec {
    /// Duration of one step (one foot), seconds.
    pub step_period: f64,
    /// Peak swing-foot lift, meters.
    pub clearance: f64,
}

impl Default for GaitSpec {
    fn default() -> Self {
        GaitSpec {
            step_period: 0.5,
            clearance: 0.08,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuCorruption {
    /// Heading error growth, rad/s.
    pub yaw_drift: f64,
    /// Translation error growth along the IMU x-axis, m/s.
    pub translation_drift: f64,
    /// Per-frame Gaussian noise on every non-root axis-angle entry, radians.
    pub articulation_noise: f64,
    /// Constant heading of the IMU world frame relative to the scene, radians.
    pub heading_offset: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraCorruption {
    /// Per-axis Gaussian position noise σ, meters.
    pub position_noise: f64,
    /// Gaussian orientation noise σ per axis-angle component, radians.
    pub orientation_noise: f64,
    pub outlier_rate: f64,
    /// Displacement of outlier positions, meters, in a random direction.
    pub outlier_magnitude: f64,
    /// Probability that a frame has no camera estimate.
    pub dropout_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Grid spacing of the z = 0 floor, meters.
    pub spacing: f64,
    /// Floor extent beyond the walked area, meters.
    pub margin: f64,
    /// Keep only floor points within `margin` of the pelvis path instead of
    /// the full bounding box.
    pub corridor: bool,
    /// Add the ground-truth contact marker positions to the cloud, as a
    /// dense scan of the floor would contain them.
    pub footprints: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            spacing: 0.02,
            margin: 1.0,
            corridor: false,
            footprints: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub path: PathSpec,
    /// Walking speed, m/s; zero gives a standing subject.
    pub speed: f64,
    /// Seconds; the sequence has `round(duration · rate_hz) + 1` frames.
    pub duration: f64,
    pub rate_hz: f64,
    pub gait: GaitSpec,
    pub imu: ImuCorruption,
    pub camera: CameraCorruption,
    pub scene: SceneSpec,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            path: PathSpec::default(),
            speed: 1.0,
            duration: 10.0,
            rate_hz: 30.0,
            gait: GaitSpec::default(),
            imu: ImuCorruption::default(),
            camera: CameraCorruption::default(),
            scene: SceneSpec::default(),
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: SimSpec = serde_json::from_str(text).map_err(|e| Error::json("simulation spec", e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let non_negative = [
            ("speed", self.speed),
            ("gait.clearance", self.gait.clearance),
            ("imu.articulation_noise", self.imu.articulation_noise),
            ("camera.position_noise", self.camera.position_noise),
            ("camera.orientation_noise", self.camera.orientation_noise),
            ("camera.outlier_magnitude", self.camera.outlier_magnitude),
            ("scene.margin", self.scene.margin),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        let positive = [
            ("duration", self.duration),
            ("rate_hz", self.rate_hz),
            ("gait.step_period", self.gait.step_period),
            ("scene.spacing", self.scene.spacing),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("imu.yaw_drift", self.imu.yaw_drift),
            ("imu.translation_drift", self.imu.translation_drift),
            ("imu.heading_offset", self.imu.heading_offset),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        for (name, v) in [
            ("camera.outlier_rate", self.camera.outlier_rate),
            ("camera.dropout_rate", self.camera.dropout_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        match &self.path {
            PathSpec::Line { heading } if !heading.is_finite() => {
                return bad("path heading must be finite".into())
            }
            PathSpec::Circle { radius } if !(radius.is_finite() && *radius > 0.0) => {
                return bad(format!("circle radius must be positive, got {radius}"))
            }
            PathSpec::Waypoints { points } => {
                if points.len() < 2 {
                    return bad("waypoint path needs at least two points".into());
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("waypoints must be finite".into());
                }
                if points.windows(2).any(|w| w[0] == w[1]) {
                    return bad("consecutive waypoints must differ".into());
                }
            }
            _ => {}
        }
        if self.frame_count() < 2 {
            return bad("duration · rate_hz must give at least two frames".into());
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.rate_hz).round() as usize + 1
    }
}

/// Ground truth plus its corrupted observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SimBundle {
    /// Exact IMU pose, translation and camera for every frame.
    pub clean: Sequence,
    pub corrupted: Sequence,
    pub scene: ScenePointCloud,
    /// The rigid head-to-camera rotation used to place the camera.
    pub head_to_camera: Rotation,
    /// Frames whose camera estimate was displaced as an outlier.
    pub outlier_frames: Vec<bool>,
}

/// Camera mounting: pitched slightly down relative to the head.
pub const HEAD_TO_CAMERA_PITCH: f64 = 0.15;

const STANCE_FRACTION: f64 = 0.6;
const CONTACT_HEIGHT: f64 = 1e-3;
const CONTACT_SPEED: f64 = 0.01;

/// Generates a bundle with the default skeleton.
pub fn generate(spec: &SimSpec) -> Result<SimBundle> {
    generate_with_skeleton(spec, &Skeleton::smpl_default())
}

pub fn generate_with_skeleton(spec: &SimSpec, sk: &Skeleton) -> Result<SimBundle> {
    spec.validate()?;
    let poses = clean_motion(spec, sk)?;
    let contacts = contacts_from_poses(&poses, sk);
    let head_to_camera = Rotation::rot_y(HEAD_TO_CAMERA_PITCH);
    let n = poses.len();
    let clean_frames: Vec<Frame> = poses
        .iter()
        .zip(&contacts)
        .enumerate()
        .map(|(j, (pose, flags))| {
            let kin = sk.kinematics(&pose.theta, &pose.trans);
            let head = kin.world[sk.head_joint()];
            Frame {
                timestamp: j as f64 / spec.rate_hz,
                theta_imu: pose.theta,
                t_imu: pose.trans,
                contacts: *flags,
                camera: Some(CameraObservation {
                    rotation: Rotation::from_matrix_unchecked(head * head_to_camera.matrix()),
                    position: kin.camera_position(sk),
                }),
            }
        })
        .collect();
    let clean = Sequence::new(clean_frames, spec.rate_hz)?;
    let (corrupted_frames, outlier_frames) = corrupt(spec, clean.frames());
    let corrupted = Sequence::new(corrupted_frames, spec.rate_hz)?;
    let scene = build_scene(spec, sk, &poses, &contacts)?;
    debug_assert_eq!(outlier_frames.len(), n);
    Ok(SimBundle {
        clean,
        corrupted,
        scene,
        head_to_camera,
        outlier_frames,
    })
}

/// Contact flags of the clean motion for `spec`.
pub fn contact_schedule(spec: &SimSpec) -> Result<Vec<[bool; 4]>> {
    spec.validate()?;
    let sk = Skeleton::smpl_default();
    let poses = clean_motion(spec, &sk)?;
    Ok(contacts_from_poses(&poses, &sk))
}

/// A part is in contact when every one of its markers is within 1 mm of the
/// floor and moves less than 1 cm horizontally to the neighbouring frame
/// (the next frame for frame 0, the previous one otherwise).
pub fn contacts_from_poses(poses: &[BodyPose], sk: &Skeleton) -> Vec<[bool; 4]> {
    let markers: Vec<[Vec<Vec3>; 4]> = poses
        .iter()
        .map(|p| {
            let kin = sk.kinematics(&p.theta, &p.trans);
            FootPart::ALL.map(|part| sk.markers(part).iter().map(|m| kin.marker(sk, m)).collect())
        })
        .collect();
    (0..poses.len())
        .map(|j| {
            let other = if j == 0 { (poses.len() > 1).then_some(1) } else { Some(j - 1) };
            FootPart::ALL.map(|part| {
                let k = part.index();
                markers[j][k].iter().enumerate().all(|(n, m)| {
                    let slow = other.is_none_or(|o| (m - markers[o][k][n]).xy().norm() < CONTACT_SPEED);
                    m.z.abs() < CONTACT_HEIGHT && slow
                })
            })
        })
        .collect()
}

fn rot_z(a: f64) -> Mat3 {
    *yaw_rotation(a).matrix()
}

fn rot_y(a: f64) -> Mat3 {
    *Rotation::rot_y(a).matrix()
}

fn rot_x(a: f64) -> Mat3 {
    *Rotation::rot_x(a).matrix()
}

/// Arc-length parameterized ground path.
struct Path {
    spec: PathSpec,
    cumulative: Vec<f64>,
}

impl Path {
    fn new(spec: &PathSpec) -> Self {
        let cumulative = match spec {
            PathSpec::Waypoints { points } => {
                let mut acc = vec![0.0];
                for w in points.windows(2) {
                    let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
                    acc.push(acc.last().unwrap() + d);
                }
                acc
            }
            _ => Vec::new(),
        };
        Path {
            spec: spec.clone(),
            cumulative,
        }
    }

    fn point(&self, s: f64) -> Vec3 {
        match &self.spec {
            PathSpec::Line { heading } => Vec3::new(s * heading.cos(), s * heading.sin(), 0.0),
            PathSpec::Circle { radius } => {
                let a = s / radius;
                Vec3::new(radius * a.sin(), radius * (1.0 - a.cos()), 0.0)
            }
            PathSpec::Waypoints { points } => {
                let c = &self.cumulative;
                let seg = match c.iter().position(|&v| v > s) {
                    Some(0) => 0,
                    Some(i) => i - 1,
                    None => c.len() - 2,
                }
                .min(c.len() - 2);
                let (a, b) = (points[seg], points[seg + 1]);
                let u = (s - c[seg]) / (c[seg + 1] - c[seg]);
                Vec3::new(a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), 0.0)
            }
        }
    }

    fn heading(&self, s: f64) -> f64 {
        match &self.spec {
            PathSpec::Line { heading } => *heading,
            PathSpec::Circle { radius } => s / radius,
            PathSpec::Waypoints { .. } => {
                // Chord direction smooths the corners of the polyline.
                let d = self.point(s + 0.3) - self.point(s - 0.3);
                d.y.atan2(d.x)
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

struct LegGeometry {
    hip: usize,
    knee: usize,
    ankle: usize,
    foot: usize,
    thigh: f64,
    shin: f64,
    /// Lateral hip offset (signed, +left) and drop below the pelvis.
    hip_offset: Vec3,
}

fn joint_index(sk: &Skeleton, name: &str) -> Result<usize> {
    sk.joints()
        .iter()
        .position(|j| j.name == name)
        .ok_or_else(|| Error::InvalidSpec(format!("skeleton has no joint named {name:?}")))
}

fn leg(sk: &Skeleton, side: &str) -> Result<LegGeometry> {
    let hip = joint_index(sk, &format!("{side}_hip"))?;
    let knee = joint_index(sk, &format!("{side}_knee"))?;
    let ankle = joint_index(sk, &format!("{side}_ankle"))?;
    let foot = joint_index(sk, &format!("{side}_foot"))?;
    let s = sk.scale();
    let vertical = |i: usize| {
        let o = sk.joints()[i].offset;
        if o.xy().norm() > 1e-9 || o.z >= 0.0 {
            Err(Error::InvalidSpec(format!(
                "leg segment {:?} must hang straight down for the gait generator",
                sk.joints()[i].name
            )))
        } else {
            Ok(-o.z * s)
        }
    };
    Ok(LegGeometry {
        hip,
        knee,
        ankle,
        foot,
        thigh: vertical(knee)?,
        shin: vertical(ankle)?,
        hip_offset: sk.joints()[hip].offset * s,
    })
}

/// Height of the ankle above the floor when the foot is flat: the lowest
/// marker touches z = 0.
fn ankle_height(sk: &Skeleton, legs: &[LegGeometry; 2]) -> f64 {
    let s = sk.scale();
    let mut lowest = f64::INFINITY;
    for part in FootPart::ALL {
        for m in sk.markers(part) {
            let leg = legs.iter().find(|l| l.ankle == m.joint || l.foot == m.joint);
            let z = match leg {
                Some(l) if l.foot == m.joint => (sk.joints()[l.foot].offset.z + m.offset.z) * s,
                _ => m.offset.z * s,
            };
            lowest = lowest.min(z);
        }
    }
    -lowest
}

/// World-frame ankle target and foot yaw.
#[derive(Clone, Copy)]
struct FootTarget {
    ankle: Vec3,
    yaw: f64,
}

struct Gait<'a> {
    path: &'a Path,
    step: f64,
    clearance: f64,
    width: f64,
    ankle_height: f64,
}

impl Gait<'_> {
    fn footprint(&self, k: i64) -> FootTarget {
        let s = k as f64 * self.step;
        let side = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let yaw = self.path.heading(s);
        let lateral = Vec3::new(-yaw.sin(), yaw.cos(), 0.0) * (side * self.width);
        let mut ankle = self.path.point(s) + lateral;
        ankle.z = self.ankle_height;
        FootTarget { ankle, yaw }
    }

    /// Target of foot `side` (0 left, 1 right) when the pelvis is at arc
    /// length `s`.
    fn target(&self, side: i64, s: f64) -> FootTarget {
        if self.step == 0.0 {
            return self.footprint(side);
        }
        let r = (s / self.step - side as f64 + STANCE_FRACTION) / 2.0;
        let m = r.floor();
        let local = (r - m) * 2.0;
        let k = 2 * m as i64 + side;
        let stance = 2.0 * STANCE_FRACTION;
        if local <= stance {
            return self.footprint(k);
        }
        let u = (local - stance) / (2.0 - stance);
        let e = 0.5 * (1.0 - (PI * u).cos());
        let a = self.footprint(k);
        let b = self.footprint(k + 2);
        let mut ankle = a.ankle + (b.ankle - a.ankle) * e;
        ankle.z = self.ankle_height + self.clearance * (PI * u).sin();
        FootTarget {
            ankle,
            yaw: a.yaw + wrap_angle(b.yaw - a.yaw) * e,
        }
    }
}

/// Hip, knee and ankle local rotations placing the ankle at `target` with a
/// flat foot of the target yaw.
fn solve_leg(pelvis: &Mat3, pelvis_pos: &Vec3, leg: &LegGeometry, target: &FootTarget) -> Result<[Mat3; 3]> {
    let hip_pos = pelvis_pos + pelvis * leg.hip_offset;
    let d = target.ankle - hip_pos;
    let dist = d.norm();
    let (l1, l2) = (leg.thigh, leg.shin);
    if dist > 0.999 * (l1 + l2) || dist < (l1 - l2).abs() + 1e-6 {
        return Err(Error::InvalidSpec(format!(
            "gait needs a hip-to-ankle distance of {dist:.3} m, outside the leg's reach"
        )));
    }
    let cos_k = ((dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let knee = cos_k.acos();
    let v_local = Vec3::new(-l2 * knee.sin(), 0.0, -l1 - l2 * knee.cos());
    let d_hat = d / dist;
    let lateral = Vec3::new(-target.yaw.sin(), target.yaw.cos(), 0.0);
    let hinge = (lateral - d_hat * lateral.dot(&d_hat)).normalize();
    let e2 = v_local.normalize();
    let e1 = Vec3::y();
    let local_basis = Mat3::from_columns(&[e1, e2, e1.cross(&e2)]);
    let world_basis = Mat3::from_columns(&[hinge, d_hat, hinge.cross(&d_hat)]);
    let hip_world = world_basis * local_basis.transpose();
    let knee_local = rot_y(knee);
    let knee_world = hip_world * knee_local;
    let ankle_local = knee_world.transpose() * rot_z(target.yaw);
    Ok([pelvis.transpose() * hip_world, knee_local, ankle_local])
}

fn clean_motion(spec: &SimSpec, sk: &Skeleton) -> Result<Vec<BodyPose>> {
    let legs = [leg(sk, "left")?, leg(sk, "right")?];
    let path = Path::new(&spec.path);
    let step = spec.speed * spec.gait.step_period;
    let h_ankle = ankle_height(sk, &legs);
    let reach = legs[0].thigh + legs[0].shin;
    // Largest horizontal hip-to-ankle offset during stance.
    let horizontal = STANCE_FRACTION * step;
    let vertical_sq = (0.97 * reach).powi(2) - horizontal * horizontal;
    if vertical_sq < (0.6 * reach).powi(2) {
        return Err(Error::InvalidSpec(format!(
            "step length {step:.3} m is too long for the leg length {reach:.3} m"
        )));
    }
    let pelvis_height = vertical_sq.sqrt() + h_ankle - legs[0].hip_offset.z;
    let gait = Gait {
        path: &path,
        step,
        clearance: spec.gait.clearance,
        width: legs[0].hip_offset.y.abs(),
        ankle_height: h_ankle,
    };
    let joint = |name: &str| joint_index(sk, name);
    let (spine1, spine2, neck, head) = (joint("spine1")?, joint("spine2")?, joint("neck")?, joint("head")?);
    let (l_shoulder, r_shoulder) = (joint("left_shoulder")?, joint("right_shoulder")?);

    (0..spec.frame_count())
        .map(|j| {
            let t = j as f64 / spec.rate_hz;
            let s = spec.speed * t;
            let phase = if step > 0.0 { PI * s / step } else { 0.0 };
            let sway = if step > 0.0 { 0.05 * phase.sin() } else { 0.0 };
            let pelvis = rot_z(path.heading(s) + sway);
            let mut pelvis_pos = path.point(s);
            pelvis_pos.z = pelvis_height;

            let mut local = [Mat3::identity(); NUM_JOINTS];
            local[0] = pelvis;
            for (side, leg) in legs.iter().enumerate() {
                let target = gait.target(side as i64, s);
                let [hip, knee, ankle] = solve_leg(&pelvis, &pelvis_pos, leg, &target)?;
                local[leg.hip] = hip;
                local[leg.knee] = knee;
                local[leg.ankle] = ankle;
            }
            local[spine1] = rot_z(-0.6 * sway);
            local[spine2] = rot_y(0.03);
            local[neck] = rot_y(0.08) * rot_z(0.03 * (0.5 * phase).sin());
            local[head] = rot_y(0.1);
            let swing = if step > 0.0 { 0.3 * phase.cos() } else { 0.0 };
            local[l_shoulder] = rot_y(swing) * rot_x(-1.35);
            local[r_shoulder] = rot_y(-swing) * rot_x(1.35);

            let mut theta = zero_theta();
            for (th, m) in theta.iter_mut().zip(&local) {
                *th = log_matrix(m);
            }
            let trans = pelvis_pos - sk.joints()[0].offset * sk.scale();
            Ok(BodyPose::new(theta, trans))
        })
        .collect()
}

const DOMAIN_IMU_NOISE: u64 = 1;
const DOMAIN_CAMERA_DROPOUT: u64 = 2;
const DOMAIN_CAMERA_OUTLIER: u64 = 3;
const DOMAIN_CAMERA_NOISE: u64 = 4;

/// Independent random stream per corruption kind and frame.
fn frame_rng(seed: u64, domain: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain);
    rng.set_word_pos(frame as u128 * 4096);
    rng
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn corrupt(spec: &SimSpec, clean: &[Frame]) -> (Vec<Frame>, Vec<bool>) {
    let imu = &spec.imu;
    let cam = &spec.camera;
    let seed = spec.seed;
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut frames = clean.to_vec();
    let mut outliers = vec![false; clean.len()];

    let drift = imu.yaw_drift != 0.0 || imu.heading_offset != 0.0 || imu.translation_drift != 0.0;
    if drift {
        let offset = rot_z(imu.heading_offset);
        let mut t_prev = offset * clean[0].t_imu;
        for (j, f) in frames.iter_mut().enumerate() {
            let yaw = rot_z(imu.heading_offset + imu.yaw_drift * f.timestamp);
            f.theta_imu[0] = log_matrix(&(yaw * exp_matrix(&clean[j].theta_imu[0])));
            if j > 0 {
                let step = clean[j].t_imu - clean[j - 1].t_imu;
                t_prev += yaw * step + offset * Vec3::x() * (imu.translation_drift / spec.rate_hz);
            }
            f.t_imu = t_prev;
        }
    }
    if imu.articulation_noise > 0.0 {
        let normal = Normal::new(0.0, imu.articulation_noise).expect("valid σ");
        for (j, f) in frames.iter_mut().enumerate() {
            let mut rng = frame_rng(seed, DOMAIN_IMU_NOISE, j);
            for v in f.theta_imu.iter_mut().skip(1) {
                for c in v.iter_mut() {
                    *c += normal.sample(&mut rng);
                }
            }
        }
    }

    for (j, f) in frames.iter_mut().enumerate() {
        if cam.dropout_rate > 0.0 {
            let mut rng = frame_rng(seed, DOMAIN_CAMERA_DROPOUT, j);
            if unit.sample(&mut rng) < cam.dropout_rate {
                f.camera = None;
                continue;
            }
        }
        let Some(c) = f.camera.as_mut() else { continue };
        if cam.outlier_rate > 0.0 {
            let mut rng = frame_rng(seed, DOMAIN_CAMERA_OUTLIER, j);
            if unit.sample(&mut rng) < cam.outlier_rate {
                c.position += random_unit(&mut rng) * cam.outlier_magnitude;
                outliers[j] = true;
            }
        }
        if cam.position_noise > 0.0 || cam.orientation_noise > 0.0 {
            let mut rng = frame_rng(seed, DOMAIN_CAMERA_NOISE, j);
            if cam.position_noise > 0.0 {
                let n = Normal::new(0.0, cam.position_noise).expect("valid σ");
                c.position += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
            }
            if cam.orientation_noise > 0.0 {
                let n = Normal::new(0.0, cam.orientation_noise).expect("valid σ");
                let w = Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                c.rotation = Rotation::from_matrix_unchecked(c.rotation.matrix() * exp_matrix(&w));
            }
        }
    }
    (frames, outliers)
}

fn build_scene(
    spec: &SimSpec,
    sk: &Skeleton,
    poses: &[BodyPose],
    contacts: &[[bool; 4]],
) -> Result<ScenePointCloud> {
    let sc = &spec.scene;
    let h = sc.spacing;
    // Horizontal samples of everything that walks: pelvis and feet.
    let mut samples: Vec<Vec3> = Vec::new();
    for p in poses {
        let kin = sk.kinematics(&p.theta, &p.trans);
        samples.push(kin.positions[0]);
        for part in FootPart::ALL {
            samples.extend(sk.markers(part).iter().map(|m| kin.marker(sk, m)));
        }
    }
    let key = |v: f64| (v / h).round() as i64;
    let mut cells: BTreeSet<(i64, i64)> = BTreeSet::new();
    if sc.corridor {
        let r = (sc.margin / h).ceil() as i64;
        let mut last: Option<Vec3> = None;
        for p in &samples {
            if last.is_some_and(|q| (p - q).xy().norm() < 0.25 * sc.margin.max(h)) {
                continue;
            }
            last = Some(*p);
            let (ci, cj) = (key(p.x), key(p.y));
            for di in -r..=r {
                for dj in -r..=r {
                    let (x, y) = ((ci + di) as f64 * h, (cj + dj) as f64 * h);
                    if (x - p.x).hypot(y - p.y) <= sc.margin {
                        cells.insert((ci + di, cj + dj));
                    }
                }
            }
        }
    } else {
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for p in &samples {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let (i0, i1) = (key(lo.x - sc.margin), key(hi.x + sc.margin));
        let (j0, j1) = (key(lo.y - sc.margin), key(hi.y + sc.margin));
        let count = ((i1 - i0 + 1) as f64) * ((j1 - j0 + 1) as f64);
        if count > 5e7 {
            return Err(Error::InvalidSpec(format!(
                "floor grid would have {count:.0} points; use a coarser spacing or a corridor scene"
            )));
        }
        for i in i0..=i1 {
            for j in j0..=j1 {
                cells.insert((i, j));
            }
        }
    }
    let mut points: Vec<Vec3> = cells
        .into_iter()
        .map(|(i, j)| Vec3::new(i as f64 * h, j as f64 * h, 0.0))
        .collect();
    if sc.footprints {
        for (j, p) in poses.iter().enumerate() {
            let kin = sk.kinematics(&p.theta, &p.trans);
            for part in FootPart::ALL {
                let k = part.index();
                let starts = contacts[j][k] && (j == 0 || !contacts[j - 1][k]);
                if starts {
                    points.extend(sk.markers(part).iter().map(|m| kin.marker(sk, m)));
                }
            }
        }
    }
    let normals = vec![Vec3::z(); points.len()];
    ScenePointCloud::new(points, Some(normals))
}

/// Root positions of a sequence's IMU stream (the pelvis joint).
pub fn root_positions(seq: &Sequence, sk: &Skeleton) -> Vec<Vec3> {
    seq.frames()
        .iter()
        .map(|f| f.t_imu + sk.joints()[0].offset * sk.scale())
        .collect()
}

/// Clean poses of a bundle as optimizer variables.
pub fn ground_truth_poses(bundle: &SimBundle) -> Vec<BodyPose> {
    bundle
        .clean
        .frames()
        .iter()
        .map(|f| BodyPose::new(f.theta_imu, f.t_imu))
        .collect()
}

/// Root yaw angle of a pose (rotation of the pelvis forward axis about z).
pub fn root_yaw(theta: &Theta) -> f64 {
    let fwd = exp_matrix(&theta[0]) * Vec3::x();
    fwd.y.atan2(fwd.x)
}
