//! Energy terms, their weighted sum and its analytic gradient.

use rayon::prelude::*;
use serde::Serialize;

use super::FusionConfig;
use crate::body::{
    head_orientation, BodyPose, FootMarker, FootPart, JointLoad, Kinematics, Skeleton, Theta,
    NUM_JOINTS, POSE_DOF,
};
use crate::error::{Error, Result};
use crate::rotmath::{log_matrix, relative_angle, Mat3, Rotation, Vec3};
use crate::scene::SceneIndex;

/// Smoothing constant of `sqrt(x² + μ²) − μ`.
pub const SMOOTHING_MU: f64 = 1e-6;
const MU2: f64 = SMOOTHING_MU * SMOOTHING_MU;

/// Smoothed norm from a squared norm.
#[inline]
fn rho_sq(x2: f64) -> f64 {
    (x2 + MU2).sqrt() - SMOOTHING_MU
}

#[inline]
fn rho(x: f64) -> f64 {
    rho_sq(x * x)
}

/// Per-frame data the energy compares against.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub theta_imu: Vec<Theta>,
    /// Contact flags indexed by [`FootPart::index`].
    pub contacts: Vec<[bool; 4]>,
    /// Localized camera orientations (body-style axes); `None` frames are
    /// skipped by the camera term.
    pub camera_rotations: Vec<Option<Rotation>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.theta_imu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_imu.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.theta_imu.len();
        for m in [self.contacts.len(), self.camera_rotations.len()] {
            if m != n {
                return Err(Error::LengthMismatch { left: n, right: m });
            }
        }
        if n == 0 {
            return Err(Error::InvalidSequence("empty batch".into()));
        }
        Ok(())
    }
}

/// Unweighted term values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub e_self: f64,
    pub e_contact: f64,
    pub e_slide: f64,
    pub e_trans: f64,
    pub e_root: f64,
    pub e_head: f64,
    pub e_imu: f64,
}

impl EnergyBreakdown {
    /// Weighted contributions in the order self, contact, slide,
    /// translation, root, head, IMU.
    pub fn weighted(&self, cfg: &FusionConfig) -> [f64; 7] {
        [
            cfg.w_s * self.e_self,
            cfg.w_sc * cfg.w_c * self.e_contact,
            cfg.w_sc * cfg.w_v * self.e_slide,
            cfg.w_sm * cfg.w_t * self.e_trans,
            cfg.w_sm * cfg.w_g * self.e_root,
            cfg.w_sm * cfg.w_h * self.e_head,
            cfg.w_p * self.e_imu,
        ]
    }

    pub fn total(&self, cfg: &FusionConfig) -> f64 {
        self.weighted(cfg).iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        [
            self.e_self,
            self.e_contact,
            self.e_slide,
            self.e_trans,
            self.e_root,
            self.e_head,
            self.e_imu,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Mean geodesic distance between predicted and localized camera
/// orientation over frames that have a camera estimate.
pub fn e_self(
    thetas: &[Theta],
    r_hc: &Rotation,
    camera_rotations: &[Option<Rotation>],
    sk: &Skeleton,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (theta, cam) in thetas.iter().zip(camera_rotations) {
        if let Some(cam) = cam {
            let predicted = head_orientation(sk, theta) * *r_hc;
            sum += rho(relative_angle(predicted.matrix(), cam.matrix()));
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean distance of contact-flagged foot markers to their nearest scene
/// point, averaged per part and over the four parts.
pub fn e_contact(
    poses: &[BodyPose],
    contacts: &[[bool; 4]],
    sk: &Skeleton,
    scene: &SceneIndex,
) -> f64 {
    let mut sum = 0.0;
    for (pose, flags) in poses.iter().zip(contacts) {
        for part in FootPart::ALL {
            if !flags[part.index()] {
                continue;
            }
            let pts = crate::body::foot_points(sk, pose, part);
            let part_sum: f64 = pts.iter().map(|p| rho(scene.nearest(p).distance)).sum();
            sum += part_sum / pts.len() as f64;
        }
    }
    sum / (4.0 * poses.len() as f64)
}

/// Mean displacement of foot markers between consecutive frames in which
/// the part is in contact in both.
pub fn e_slide(poses: &[BodyPose], contacts: &[[bool; 4]], sk: &Skeleton) -> f64 {
    if poses.len() < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for j in 0..poses.len() - 1 {
        for part in FootPart::ALL {
            if !(contacts[j][part.index()] && contacts[j + 1][part.index()]) {
                continue;
            }
            let a = crate::body::foot_points(sk, &poses[j], part);
            let b = crate::body::foot_points(sk, &poses[j + 1], part);
            let part_sum: f64 = a.iter().zip(&b).map(|(p, q)| rho((p - q).norm())).sum();
            sum += part_sum / a.len() as f64;
        }
    }
    sum / (4.0 * (poses.len() - 1) as f64)
}

/// Mean consecutive translation distance, root-orientation geodesic and
/// head-orientation geodesic.
pub fn e_smooth(thetas: &[Theta], trans: &[Vec3], sk: &Skeleton) -> (f64, f64, f64) {
    let n = thetas.len();
    if n < 2 {
        return (0.0, 0.0, 0.0);
    }
    let mut et = 0.0;
    let mut eg = 0.0;
    let mut eh = 0.0;
    for j in 0..n - 1 {
        et += rho((trans[j + 1] - trans[j]).norm());
        let g0 = crate::rotmath::exp(crate::rotmath::AxisAngle(thetas[j][0]));
        let g1 = crate::rotmath::exp(crate::rotmath::AxisAngle(thetas[j + 1][0]));
        eg += rho(relative_angle(g0.matrix(), g1.matrix()));
        let h0 = head_orientation(sk, &thetas[j]);
        let h1 = head_orientation(sk, &thetas[j + 1]);
        eh += rho(relative_angle(h0.matrix(), h1.matrix()));
    }
    let d = (n - 1) as f64;
    (et / d, eg / d, eh / d)
}

/// Mean distance of the articulation (root excluded) from the IMU pose.
pub fn e_imu(thetas: &[Theta], thetas_imu: &[Theta]) -> f64 {
    let sum: f64 = thetas
        .iter()
        .zip(thetas_imu)
        .map(|(a, b)| {
            let sq: f64 = (1..NUM_JOINTS).map(|i| (a[i] - b[i]).norm_squared()).sum();
            rho_sq(sq)
        })
        .sum();
    sum / thetas.len() as f64
}

#[cfg(test)]
fn poses_from_vars(vars: &[f64]) -> Vec<BodyPose> {
    vars.chunks_exact(POSE_DOF).map(BodyPose::from_vars).collect()
}

fn check_vars(vars: &[f64], batch: &Batch) -> Result<()> {
    batch.check()?;
    if vars.len() != POSE_DOF * batch.len() {
        return Err(Error::DimensionMismatch {
            expected: POSE_DOF * batch.len(),
            got: vars.len(),
        });
    }
    Ok(())
}

/// Weighted energy and per-term values with exact nearest scene points.
pub fn evaluate_objective(
    vars: &[f64],
    batch: &Batch,
    cfg: &FusionConfig,
    sk: &Skeleton,
    scene: &SceneIndex,
    r_hc: &Rotation,
) -> Result<(f64, EnergyBreakdown)> {
    check_vars(vars, batch)?;
    let mut obj = Objective::new(sk, scene, batch, cfg, r_hc);
    obj.refresh_targets(vars);
    let b = obj.breakdown(vars);
    Ok((b.total(cfg), b))
}

/// Analytic gradient with nearest scene points taken at `vars`.
pub fn gradient(
    vars: &[f64],
    batch: &Batch,
    cfg: &FusionConfig,
    sk: &Skeleton,
    scene: &SceneIndex,
    r_hc: &Rotation,
) -> Result<Vec<f64>> {
    check_vars(vars, batch)?;
    let mut obj = Objective::new(sk, scene, batch, cfg, r_hc);
    obj.refresh_targets(vars);
    let mut g = vec![0.0; vars.len()];
    obj.value_and_gradient(vars, &mut g);
    Ok(g)
}

#[derive(Clone, Copy, Debug)]
struct TargetCache {
    /// Marker position when the target was last queried.
    origin: Vec3,
    target: Vec3,
    /// Distance from `origin` to the second-nearest scene point.
    second: f64,
}

struct FrameState {
    kin: Kinematics,
    markers: Vec<Vec3>,
    head: Mat3,
}

/// The batch energy with frozen nearest-point targets.
///
/// Variables are laid out per frame: 72 joint axis-angle entries followed by
/// the 3 translation entries.
pub struct Objective<'a> {
    sk: &'a Skeleton,
    scene: &'a SceneIndex,
    batch: &'a Batch,
    cfg: &'a FusionConfig,
    r_hc: Mat3,
    markers: Vec<(FootPart, FootMarker)>,
    inv_part_size: [f64; 4],
    /// Per frame and marker; only contact-flagged entries are maintained.
    targets: Vec<Option<TargetCache>>,
}

impl<'a> Objective<'a> {
    pub fn new(
        sk: &'a Skeleton,
        scene: &'a SceneIndex,
        batch: &'a Batch,
        cfg: &'a FusionConfig,
        r_hc: &Rotation,
    ) -> Self {
        let markers: Vec<(FootPart, FootMarker)> = FootPart::ALL
            .iter()
            .flat_map(|&p| sk.markers(p).iter().map(move |m| (p, *m)))
            .collect();
        let inv_part_size = FootPart::ALL.map(|p| 1.0 / sk.markers(p).len() as f64);
        let targets = vec![None; markers.len() * batch.len()];
        Objective {
            sk,
            scene,
            batch,
            cfg,
            r_hc: *r_hc.matrix(),
            markers,
            inv_part_size,
            targets,
        }
    }

    pub fn num_vars(&self) -> usize {
        POSE_DOF * self.batch.len()
    }

    fn frame_states(&self, vars: &[f64]) -> Vec<FrameState> {
        let head = self.sk.head_joint();
        vars.par_chunks_exact(POSE_DOF)
            .map(|chunk| {
                let pose = BodyPose::from_vars(chunk);
                let kin = self.sk.kinematics(&pose.theta, &pose.trans);
                let markers = self.markers.iter().map(|(_, m)| kin.marker(self.sk, m)).collect();
                FrameState {
                    head: kin.world[head],
                    kin,
                    markers,
                }
            })
            .collect()
    }

    /// Re-solves the nearest scene point of every contact-flagged marker.
    /// Returns whether any target moved.
    pub fn refresh_targets(&mut self, vars: &[f64]) -> bool {
        let states = self.frame_states(vars);
        let nm = self.markers.len();
        let scene = self.scene;
        let markers = &self.markers;
        let contacts = &self.batch.contacts;
        self.targets
            .par_chunks_mut(nm)
            .zip(states.par_iter())
            .enumerate()
            .map(|(j, (slots, state))| {
                let mut changed = false;
                for (n, slot) in slots.iter_mut().enumerate() {
                    if !contacts[j][markers[n].0.index()] {
                        continue;
                    }
                    let m = state.markers[n];
                    if let Some(c) = slot {
                        // Every other scene point is at least
                        // `second - |m - origin|` away from m.
                        if (m - c.target).norm() <= c.second - (m - c.origin).norm() {
                            continue;
                        }
                    }
                    let (first, second) = scene.nearest_two(&m);
                    let next = TargetCache {
                        origin: m,
                        target: first.point,
                        second: second.map_or(f64::INFINITY, |s| s.distance),
                    };
                    changed |= slot.is_none_or(|c| c.target != next.target);
                    *slot = Some(next);
                }
                changed
            })
            .reduce(|| false, |a, b| a || b)
    }

    pub fn breakdown(&self, vars: &[f64]) -> EnergyBreakdown {
        self.evaluate(vars, None)
    }

    pub fn value(&self, vars: &[f64]) -> f64 {
        self.evaluate(vars, None).total(self.cfg)
    }

    /// Writes the gradient into `grad` and returns the energy.
    pub fn value_and_gradient(&self, vars: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(vars, Some(grad)).total(self.cfg)
    }

    fn evaluate(&self, vars: &[f64], grad: Option<&mut [f64]>) -> EnergyBreakdown {
        assert_eq!(vars.len(), self.num_vars(), "variable vector length");
        let cfg = self.cfg;
        let t = self.batch.len();
        let nm = self.markers.len();
        let head = self.sk.head_joint();
        let states = self.frame_states(vars);
        let want_grad = grad.is_some();
        let mut loads = if want_grad {
            vec![[JointLoad::default(); NUM_JOINTS]; t]
        } else {
            Vec::new()
        };
        let mut trans_grad = vec![Vec3::zeros(); if want_grad { t } else { 0 }];
        let mut out = EnergyBreakdown::default();

        // Camera orientation.
        let n_cam = self.batch.camera_rotations.iter().filter(|c| c.is_some()).count();
        if n_cam > 0 {
            let coef = cfg.w_s / n_cam as f64;
            for (j, cam) in self.batch.camera_rotations.iter().enumerate() {
                let Some(cam) = cam else { continue };
                let predicted = states[j].head * self.r_hc;
                let phi = log_matrix(&(predicted.transpose() * cam.matrix()));
                let q = (phi.norm_squared() + MU2).sqrt();
                out.e_self += q - SMOOTHING_MU;
                if want_grad {
                    loads[j][head].add_rotation(&(predicted * phi * (-coef / q)));
                }
            }
            out.e_self /= n_cam as f64;
        }

        // Contact.
        let contact_coef = cfg.w_sc * cfg.w_c / (4.0 * t as f64);
        for j in 0..t {
            let flags = &self.batch.contacts[j];
            for (n, (part, marker)) in self.markers.iter().enumerate() {
                if !flags[part.index()] {
                    continue;
                }
                let target = self.targets[j * nm + n]
                    .expect("targets refreshed for contact markers")
                    .target;
                let m = states[j].markers[n];
                let d = m - target;
                let q = (d.norm_squared() + MU2).sqrt();
                let w = self.inv_part_size[part.index()];
                out.e_contact += w * (q - SMOOTHING_MU);
                if want_grad {
                    loads[j][marker.joint].add_point(&m, &(d * (contact_coef * w / q)));
                }
            }
        }
        out.e_contact /= 4.0 * t as f64;

        if t >= 2 {
            let pairs = (t - 1) as f64;
            // Sliding.
            let slide_coef = cfg.w_sc * cfg.w_v / (4.0 * pairs);
            for j in 0..t - 1 {
                let (fa, fb) = (&self.batch.contacts[j], &self.batch.contacts[j + 1]);
                for (n, (part, marker)) in self.markers.iter().enumerate() {
                    let k = part.index();
                    if !(fa[k] && fb[k]) {
                        continue;
                    }
                    let (ma, mb) = (states[j].markers[n], states[j + 1].markers[n]);
                    let d = ma - mb;
                    let q = (d.norm_squared() + MU2).sqrt();
                    let w = self.inv_part_size[k];
                    out.e_slide += w * (q - SMOOTHING_MU);
                    if want_grad {
                        let g = d * (slide_coef * w / q);
                        loads[j][marker.joint].add_point(&ma, &g);
                        loads[j + 1][marker.joint].add_point(&mb, &(-g));
                    }
                }
            }
            out.e_slide /= 4.0 * pairs;

            // Smoothness.
            let t_coef = cfg.w_sm * cfg.w_t / pairs;
            let g_coef = cfg.w_sm * cfg.w_g / pairs;
            let h_coef = cfg.w_sm * cfg.w_h / pairs;
            for j in 0..t - 1 {
                let ta = &vars[j * POSE_DOF + 72..j * POSE_DOF + 75];
                let tb = &vars[(j + 1) * POSE_DOF + 72..(j + 1) * POSE_DOF + 75];
                let d = Vec3::new(tb[0] - ta[0], tb[1] - ta[1], tb[2] - ta[2]);
                let q = (d.norm_squared() + MU2).sqrt();
                out.e_trans += q - SMOOTHING_MU;
                if want_grad {
                    let g = d * (t_coef / q);
                    trans_grad[j + 1] += g;
                    trans_grad[j] -= g;
                }
                for (joint, coef, acc) in [
                    (0, g_coef, &mut out.e_root),
                    (head, h_coef, &mut out.e_head),
                ] {
                    let ra = &states[j].kin.world[joint];
                    let rb = &states[j + 1].kin.world[joint];
                    let phi = log_matrix(&(ra.transpose() * rb));
                    let q = (phi.norm_squared() + MU2).sqrt();
                    *acc += q - SMOOTHING_MU;
                    if want_grad {
                        let g = ra * phi * (coef / q);
                        loads[j + 1][joint].add_rotation(&g);
                        loads[j][joint].add_rotation(&(-g));
                    }
                }
            }
            out.e_trans /= pairs;
            out.e_root /= pairs;
            out.e_head /= pairs;
        }

        // Articulation prior.
        let imu_coef = cfg.w_p / t as f64;
        let mut imu_grads: Vec<(usize, Vec<Vec3>, f64)> = Vec::new();
        for j in 0..t {
            let base = j * POSE_DOF;
            let imu = &self.batch.theta_imu[j];
            let mut sq = 0.0;
            for i in 1..NUM_JOINTS {
                for a in 0..3 {
                    let d = vars[base + 3 * i + a] - imu[i][a];
                    sq += d * d;
                }
            }
            let q = (sq + MU2).sqrt();
            out.e_imu += q - SMOOTHING_MU;
            if want_grad {
                imu_grads.push((j, Vec::new(), imu_coef / q));
            }
        }
        out.e_imu /= t as f64;

        if let Some(grad) = grad {
            assert_eq!(grad.len(), vars.len(), "gradient length");
            let sk = self.sk;
            grad.par_chunks_exact_mut(POSE_DOF)
                .zip(loads.par_iter_mut())
                .zip(states.par_iter())
                .zip(vars.par_chunks_exact(POSE_DOF))
                .enumerate()
                .for_each(|(j, (((g, load), state), x))| {
                    let pose = BodyPose::from_vars(x);
                    let sens = state.kin.sensitivities(&pose.theta);
                    let (dtheta, dtrans) = state.kin.pullback(sk, &sens, load);
                    for (i, v) in dtheta.iter().enumerate() {
                        g[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
                    }
                    let dt = dtrans + trans_grad[j];
                    g[72..75].copy_from_slice(dt.as_slice());
                });
            for (j, _, scale) in imu_grads {
                let base = j * POSE_DOF;
                let imu = &self.batch.theta_imu[j];
                for i in 1..NUM_JOINTS {
                    for a in 0..3 {
                        grad[base + 3 * i + a] += scale * (vars[base + 3 * i + a] - imu[i][a]);
                    }
                }
            }
        }
        out
    }
}
