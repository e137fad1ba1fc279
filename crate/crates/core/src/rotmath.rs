//! Rotation algebra on SO(3).
//!
//! Rotations are stored as 3×3 matrices. Tangent vectors (axis-angle) are
//! plain 3-vectors: the direction is the rotation axis, the norm the angle in
//! radians. `hat` maps a tangent vector to its skew-symmetric matrix and `vee`
//! is its inverse.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle `exp` and `log` switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-7;

/// Tolerance on `|RᵀR - I|` and `|det R - 1|` for a matrix to count as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// An axis-angle vector.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vec3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// The equivalent axis-angle with magnitude in `[0, π]`.
    pub fn canonical(self) -> Self {
        AxisAngle(canonicalize(self.0))
    }
}

/// Rewrites an axis-angle so that its magnitude is at most π.
pub fn canonicalize(v: Vec3) -> Vec3 {
    let angle = v.norm();
    if angle <= PI {
        return v;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    v * (wrapped / angle)
}

/// A rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    /// Validates `m` against the rotation invariants.
    pub fn new(m: Mat3) -> Result<Self> {
        let orthogonality = (m.transpose() * m - Mat3::identity()).abs().max();
        let determinant = m.determinant();
        if !m.iter().all(|v| v.is_finite())
            || orthogonality > ROTATION_TOLERANCE
            || (determinant - 1.0).abs() > ROTATION_TOLERANCE
        {
            return Err(Error::NotARotation {
                orthogonality,
                determinant,
            });
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without checking; callers guarantee it came from rotation
    /// products.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    pub fn rot_x(angle: f64) -> Self {
        exp(AxisAngle::new(angle, 0.0, 0.0))
    }

    pub fn rot_y(angle: f64) -> Self {
        exp(AxisAngle::new(0.0, angle, 0.0))
    }

    pub fn rot_z(angle: f64) -> Self {
        exp(AxisAngle::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Builds a rotation from a `[w, x, y, z]` quaternion (normalized first).
    pub fn from_quaternion_wxyz(q: [f64; 4]) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::NotARotation {
                orthogonality: f64::NAN,
                determinant: 0.0,
            });
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Rotation(*unit.to_rotation_matrix().matrix()))
    }

    pub fn to_quaternion_wxyz(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let mut out = [q.w, q.i, q.j, q.k];
        if out[0] < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
        out
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;

    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Skew-symmetric matrix of `w`, so that `hat(w) * v == w.cross(&v)`.
#[rustfmt::skip]
pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(
         0.0, -w.z,  w.y,
         w.z,  0.0, -w.x,
        -w.y,  w.x,  0.0,
    )
}

/// Inverse of [`hat`]. Only the antisymmetric part of `m` is used.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues' formula.
pub fn exp(a: AxisAngle) -> Rotation {
    Rotation(exp_matrix(&a.0))
}

pub(crate) fn exp_matrix(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let k2 = k * k;
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k2 * b
}

/// Logarithm map. Rejects matrices that violate the rotation invariants.
pub fn log(r: &Rotation) -> Result<AxisAngle> {
    let checked = Rotation::new(r.0)?;
    Ok(AxisAngle(log_matrix(&checked.0)))
}

/// Logarithm of a matrix already known to be a rotation. The result has
/// magnitude in `[0, π]`.
pub(crate) fn log_matrix(m: &Mat3) -> Vec3 {
    let skew = vee(m);
    let sin = skew.norm();
    let cos = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let angle = sin.atan2(cos);

    if angle < SMALL_ANGLE {
        return skew * (1.0 + angle * angle / 6.0);
    }
    if cos > -0.5 {
        return skew * (angle / sin);
    }

    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part (R + Rᵀ)/2 = cos I + (1 - cos) n nᵀ using its largest
    // diagonal entry.
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Mat3::identity() * cos) / (1.0 - cos);
    let k = (0..3)
        .max_by(|&i, &j| outer[(i, i)].total_cmp(&outer[(j, j)]))
        .unwrap_or(0);
    let nk = outer[(k, k)].max(0.0).sqrt();
    let mut axis = Vec3::new(outer[(0, k)], outer[(1, k)], outer[(2, k)]) / nk;
    axis[k] = nk;
    axis.normalize_mut();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// `|log(R1ᵀ R2)|`, the angle of the relative rotation.
pub fn geodesic_distance(r1: &Rotation, r2: &Rotation) -> Result<f64> {
    let r1 = Rotation::new(r1.0)?;
    let r2 = Rotation::new(r2.0)?;
    Ok(relative_angle(&r1.0, &r2.0))
}

pub(crate) fn relative_angle(r1: &Mat3, r2: &Mat3) -> f64 {
    let rel = r1.transpose() * r2;
    let sin = vee(&rel).norm();
    let cos = (0.5 * (rel.trace() - 1.0)).clamp(-1.0, 1.0);
    sin.atan2(cos)
}

/// Constant-speed geodesic interpolation: `R1 exp(s log(R1ᵀ R2))`.
pub fn interpolate(r1: &Rotation, r2: &Rotation, s: f64) -> Rotation {
    let delta = log_matrix(&(r1.0.transpose() * r2.0));
    Rotation(r1.0 * exp_matrix(&(delta * s)))
}

/// Right Jacobian of SO(3): `exp(w + δ) ≈ exp(w) exp(J_r(w) δ)`.
pub fn right_jacobian(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() - k * a + k * k * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn axis_angle_strategy(max_angle: f64) -> impl Strategy<Value = Vec3> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            0.0f64..max_angle,
        )
            .prop_filter_map("degenerate axis", |(x, y, z, a)| {
                let v = Vec3::new(x, y, z);
                (v.norm() > 1e-3).then(|| v.normalize() * a)
            })
    }

    #[test]
    fn exp_zero_is_identity() {
        assert_eq!(exp(AxisAngle::default()).matrix(), &Mat3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = exp(AxisAngle::new(0.0, 0.0, FRAC_PI_2));
        let x = r * Vec3::x();
        assert!((x - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn log_identity_is_zero() {
        assert_eq!(log(&Rotation::identity()).unwrap().0, Vec3::zeros());
    }

    #[test]
    fn log_half_turn_about_x() {
        let r = Rotation::from_matrix_unchecked(Mat3::new(
            1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0,
        ));
        let a = log(&r).unwrap().0;
        assert!((a.x.abs() - PI).abs() < 1e-12, "{a}");
        assert!(a.y.abs() < 1e-12 && a.z.abs() < 1e-12);
    }

    #[test]
    fn log_rejects_non_rotation() {
        let m = Mat3::identity() * 1.01;
        assert!(matches!(
            log(&Rotation::from_matrix_unchecked(m)),
            Err(Error::NotARotation { .. })
        ));
        let reflection = Mat3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::new(reflection).is_err());
    }

    #[test]
    fn log_near_pi_is_stable() {
        for eps in [1e-3, 1e-6, 1e-9, 0.0] {
            let a = Vec3::new(0.3, -0.5, 0.8).normalize() * (PI - eps);
            let r = exp(AxisAngle(a));
            let back = log(&r).unwrap().0;
            let err = (back - a).norm().min((back + a).norm());
            assert!(err < 1e-8, "eps={eps} err={err}");
            assert!((exp(AxisAngle(back)).matrix() - r.matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn small_angle_branch_roundtrip() {
        let a = Vec3::new(3e-8, -1e-8, 2e-8);
        let back = log(&exp(AxisAngle(a))).unwrap().0;
        assert!((back - a).norm() < 1e-20);
    }

    #[test]
    fn geodesic_examples() {
        let r = Rotation::rot_x(0.7) * Rotation::rot_y(-0.2);
        assert_eq!(geodesic_distance(&r, &r).unwrap(), 0.0);
        let d = geodesic_distance(&Rotation::identity(), &Rotation::rot_z(0.3)).unwrap();
        assert!((d - 0.3).abs() < 1e-15);
    }

    #[test]
    fn canonicalize_wraps_large_angles() {
        let v = Vec3::new(0.0, 0.0, 1.5 * PI);
        let c = canonicalize(v);
        assert!((c - Vec3::new(0.0, 0.0, -0.5 * PI)).norm() < 1e-12);
        let r1 = exp_matrix(&v);
        let r2 = exp_matrix(&c);
        assert!((r1 - r2).abs().max() < 1e-12);
    }

    #[test]
    fn quaternion_roundtrip() {
        let r = exp(AxisAngle::new(0.4, -1.1, 0.9));
        let q = r.to_quaternion_wxyz();
        let back = Rotation::from_quaternion_wxyz(q).unwrap();
        assert!((back.matrix() - r.matrix()).abs().max() < 1e-14);
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let w = Vec3::new(0.5, -0.7, 1.2);
        let jr = right_jacobian(&w);
        let r = exp_matrix(&w);
        let h = 1e-6;
        for i in 0..3 {
            let mut dp = w;
            dp[i] += h;
            let mut dm = w;
            dm[i] -= h;
            let fd = (log_matrix(&(r.transpose() * exp_matrix(&dp)))
                - log_matrix(&(r.transpose() * exp_matrix(&dm))))
                / (2.0 * h);
            assert!((fd - jr.column(i)).norm() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn log_exp_roundtrip(a in axis_angle_strategy(PI - 1e-3)) {
            let back = log(&exp(AxisAngle(a))).unwrap().0;
            prop_assert!((back - a).norm() < 1e-9);
        }

        #[test]
        fn exp_log_roundtrip(a in axis_angle_strategy(PI)) {
            let r = exp(AxisAngle(a));
            let back = exp(log(&r).unwrap());
            prop_assert!((back.matrix() - r.matrix()).abs().max() < 1e-8);
            prop_assert!(log(&r).unwrap().angle() <= PI + 1e-12);
        }

        #[test]
        fn geodesic_triangle_inequality(
            a in axis_angle_strategy(PI),
            b in axis_angle_strategy(PI),
            c in axis_angle_strategy(PI),
        ) {
            let (ra, rb, rc) = (exp(AxisAngle(a)), exp(AxisAngle(b)), exp(AxisAngle(c)));
            let ab = geodesic_distance(&ra, &rb).unwrap();
            let bc = geodesic_distance(&rb, &rc).unwrap();
            let ac = geodesic_distance(&ra, &rc).unwrap();
            prop_assert!(ac <= ab + bc + 1e-7);
        }

        #[test]
        fn geodesic_left_invariance_and_symmetry(
            q in axis_angle_strategy(PI),
            a in axis_angle_strategy(PI),
            b in axis_angle_strategy(PI),
        ) {
            let (rq, ra, rb) = (exp(AxisAngle(q)), exp(AxisAngle(a)), exp(AxisAngle(b)));
            let d = geodesic_distance(&ra, &rb).unwrap();
            let dq = geodesic_distance(&(rq * ra), &(rq * rb)).unwrap();
            prop_assert!((d - dq).abs() < 1e-8);
            prop_assert!((d - geodesic_distance(&rb, &ra).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&d));
        }
    }
}
