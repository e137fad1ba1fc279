//! Registration of the IMU stream to the scene frame and tangent-based
//! heading correction.
//!
//! Scenes are required to be z-up: the registration searches over rotations
//! about the scene z-axis only.

use serde::{Deserialize, Serialize};

use crate::body::{head_matrix, Skeleton, Theta};
use crate::error::{Error, Result};
use crate::fusion::Sequence;
use crate::rotmath::{exp_matrix, log_matrix, relative_angle, Mat3, Rotation, Vec3};

/// Planar (yaw-only) registration rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Rotation,
    /// Rotation angle about +z (radians).
    pub yaw: f64,
    /// Remaining geodesic distance between the aligned head and the camera.
    pub residual: f64,
}

/// Exact rotation about +z; off-axis entries are exactly zero.
pub fn yaw_rotation(yaw: f64) -> Rotation {
    let (s, c) = yaw.sin_cos();
    Rotation::from_matrix_unchecked(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Yaw minimizing the geodesic distance between `rot_z(yaw) · R_H(θ₀)` and
/// the frame-0 camera orientation.
///
/// Closed form: with `M = R_C R_Hᵀ`, `trace(rot_z(x)ᵀ M)` equals
/// `cos x (M₀₀ + M₁₁) + sin x (M₁₀ − M₀₁) + M₂₂`, and the geodesic distance
/// decreases monotonically in that trace.
pub fn align_frames(theta0_imu: &Theta, camera0: &Rotation, sk: &Skeleton) -> AlignmentResult {
    let head = head_matrix(sk, theta0_imu);
    align_matrices(&head, camera0.matrix())
}

pub(crate) fn align_matrices(head: &Mat3, camera: &Mat3) -> AlignmentResult {
    let m = camera * head.transpose();
    let yaw = (m[(1, 0)] - m[(0, 1)]).atan2(m[(0, 0)] + m[(1, 1)]);
    let rotation = yaw_rotation(yaw);
    let residual = relative_angle(&(rotation.matrix() * head), camera);
    AlignmentResult {
        rotation,
        yaw,
        residual,
    }
}

/// Premultiplies every IMU root orientation and translation by `r_a`.
/// Camera observations and articulation are untouched.
pub fn apply_alignment(seq: &Sequence, r_a: &Rotation) -> Sequence {
    let mut out = seq.clone();
    if *r_a == Rotation::identity() {
        return out;
    }
    for f in out.frames_mut() {
        f.theta_imu[0] = log_matrix(&(r_a.matrix() * exp_matrix(&f.theta_imu[0])));
        f.t_imu = *r_a * f.t_imu;
    }
    out
}

/// Displacement below which a frame counts as stationary (meters over
/// `gamma` frames).
pub const STATIONARY_THRESHOLD: f64 = 0.01;

/// Unit forward differences at a fixed frame offset.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    /// `None` marks a stationary frame.
    pub tangents: Vec<Option<Vec3>>,
    pub gamma: usize,
}

/// `v_j = (t_{j+γ} − t_j) / ‖·‖`; the last `γ` frames reuse the final
/// computable tangent. Sequences no longer than `γ` are entirely stationary.
pub fn trajectory_tangents(translations: &[Vec3], gamma: usize) -> TangentField {
    let n = translations.len();
    let gamma = gamma.max(1);
    if n <= gamma {
        return TangentField {
            tangents: vec![None; n],
            gamma,
        };
    }
    let mut tangents = Vec::with_capacity(n);
    for j in 0..n - gamma {
        let d = translations[j + gamma] - translations[j];
        let len = d.norm();
        tangents.push((len >= STATIONARY_THRESHOLD).then(|| d / len));
    }
    let last = tangents[n - gamma - 1];
    tangents.resize(n, last);
    TangentField { tangents, gamma }
}

/// How the tangent-alignment rotation is built from `v_I × v_C`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadingVariant {
    /// Axis `v_I × v_C` normalized, angle `atan2(‖v_I × v_C‖, v_I · v_C)`.
    #[default]
    Exact,
    /// `exp(hat(v_I × v_C))`: angle equals the sine of the tangent angle.
    Verbatim,
}

/// Below this cross-product norm, tangents count as parallel.
const PARALLEL_TOLERANCE: f64 = 1e-6;

/// Rotation turning `v_imu` towards `v_cam`.
pub fn heading_correction_rotation(
    v_imu: &Vec3,
    v_cam: &Vec3,
    variant: HeadingVariant,
) -> Result<Rotation> {
    let cross = v_imu.cross(v_cam);
    let dot = v_imu.dot(v_cam);
    let s = cross.norm();
    if s < PARALLEL_TOLERANCE && dot < 0.0 {
        return Err(Error::AmbiguousCorrection);
    }
    let w = match variant {
        HeadingVariant::Verbatim => cross,
        HeadingVariant::Exact if s == 0.0 => Vec3::zeros(),
        HeadingVariant::Exact => cross * (s.atan2(dot) / s),
    };
    Ok(Rotation::from_matrix_unchecked(exp_matrix(&w)))
}

/// Replaces the root orientation by `log(C · exp(θ_root))` where `C` turns
/// the IMU tangent onto the camera tangent; other joints are untouched.
pub fn heading_correction(
    theta_imu: &Theta,
    v_imu: &Vec3,
    v_cam: &Vec3,
    variant: HeadingVariant,
) -> Result<Theta> {
    let c = heading_correction_rotation(v_imu, v_cam, variant)?;
    Ok(apply_root_rotation(theta_imu, &c))
}

pub(crate) fn apply_root_rotation(theta: &Theta, c: &Rotation) -> Theta {
    let mut out = *theta;
    if *c != Rotation::identity() {
        out[0] = log_matrix(&(c.matrix() * exp_matrix(&theta[0])));
    }
    out
}
