//! Minimal three-point absolute pose solver.
//!
//! Direct parameterization through intermediate camera and world frames:
//! the unknown pose reduces to a single quartic in the cosine of the angle
//! between the camera-side and world-side auxiliary planes.

use nalgebra::{Complex, Matrix4};

use super::ransac::refine_pose;
use super::{CameraIntrinsics, CameraPoseEstimate, Correspondence};
use crate::error::{Error, Result};
use crate::rotmath::{Mat3, Rotation, Vec3};

/// Imaginary parts below this (relative) bound are treated as real roots.
/// Double roots, which symmetric configurations produce, come out of the
/// eigen-solver as conjugate pairs with imaginary parts around 1e-8; each
/// accepted root is Newton-polished and every pose is checked by
/// reprojection, so spurious roots are discarded downstream.
const REAL_ROOT_TOLERANCE: f64 = 1e-6;

/// Solutions whose three-point reprojection error (pixels) stays above this
/// after refinement are discarded.
const MAX_SOLUTION_RESIDUAL: f64 = 1e-3;

/// All poses consistent with three correspondences.
pub fn p3p_solve(
    cs: &[Correspondence; 3],
    k: &CameraIntrinsics,
) -> Result<Vec<CameraPoseEstimate>> {
    k.validate()?;
    let bearings = cs.map(|c| k.bearing(&c.pixel));
    let world = cs.map(|c| c.world);
    let raw = solve_bearings(&world, &bearings)?;
    let mut out = Vec::with_capacity(raw.len());
    for (r, c) in raw {
        let mut est = CameraPoseEstimate::new(r, c, 0.0);
        if let Some(polished) = refine_pose(&est, cs, k, 10) {
            est = polished;
        }
        let residual = cs
            .iter()
            .map(|c| est.reprojection_error(k, c))
            .fold(0.0, f64::max);
        if residual < MAX_SOLUTION_RESIDUAL {
            out.push(est);
        }
    }
    Ok(out)
}

/// Raw solutions as (camera orientation, camera centre) pairs from unit
/// bearing vectors.
pub(crate) fn solve_bearings(
    world: &[Vec3; 3],
    bearings: &[Vec3; 3],
) -> Result<Vec<(Rotation, Vec3)>> {
    let d12 = (world[1] - world[0]).norm();
    let d13 = (world[2] - world[0]).norm();
    if d12 < 1e-12 || d13 < 1e-12 || (world[2] - world[1]).norm() < 1e-12 {
        return Err(Error::DegenerateConfiguration("coincident world points"));
    }
    if (world[1] - world[0]).cross(&(world[2] - world[0])).norm() < 1e-9 * d12 * d13 {
        return Err(Error::DegenerateConfiguration("collinear world points"));
    }

    let (mut p1, mut p2) = (world[0], world[1]);
    let p3 = world[2];
    let (mut f1, mut f2) = (bearings[0], bearings[1]);
    let f3 = bearings[2];

    let camera_frame = |f1: &Vec3, f2: &Vec3| -> Result<Mat3> {
        let e3 = f1.cross(f2);
        let n = e3.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateConfiguration("coincident bearing vectors"));
        }
        let e3 = e3 / n;
        let e2 = e3.cross(f1);
        Ok(Mat3::from_rows(&[f1.transpose(), e2.transpose(), e3.transpose()]))
    };

    let mut t = camera_frame(&f1, &f2)?;
    let mut f3t = t * f3;
    if f3t.z > 0.0 {
        std::mem::swap(&mut f1, &mut f2);
        std::mem::swap(&mut p1, &mut p2);
        t = camera_frame(&f1, &f2)?;
        f3t = t * f3;
    }
    if f3t.z.abs() < 1e-12 {
        return Err(Error::DegenerateConfiguration(
            "bearing vectors are coplanar",
        ));
    }

    let n1 = (p2 - p1).normalize();
    let n3 = n1.cross(&(p3 - p1)).normalize();
    let n2 = n3.cross(&n1);
    let n = Mat3::from_rows(&[n1.transpose(), n2.transpose(), n3.transpose()]);
    let p3n = n * (p3 - p1);

    let d12 = (p2 - p1).norm();
    let f_1 = f3t.x / f3t.z;
    let f_2 = f3t.y / f3t.z;
    if f_2.abs() < 1e-14 {
        return Err(Error::DegenerateConfiguration(
            "third bearing lies in the plane of the first axis",
        ));
    }
    let p_1 = p3n.x;
    let p_2 = p3n.y;

    let cos_beta = f1.dot(&f2);
    let mut b = (1.0 / (1.0 - cos_beta * cos_beta) - 1.0).sqrt();
    if cos_beta < 0.0 {
        b = -b;
    }

    let f1p2 = f_1 * f_1;
    let f2p2 = f_2 * f_2;
    let p1p2 = p_1 * p_1;
    let p1p3 = p1p2 * p_1;
    let p1p4 = p1p3 * p_1;
    let p2p2 = p_2 * p_2;
    let p2p3 = p2p2 * p_2;
    let p2p4 = p2p3 * p_2;
    let d2 = d12 * d12;
    let b2 = b * b;

    let c4 = -f2p2 * p2p4 - p2p4 * f1p2 - p2p4;
    let c3 = 2.0 * p2p3 * d12 * b + 2.0 * f2p2 * p2p3 * d12 * b - 2.0 * f_2 * p2p3 * f_1 * d12;
    let c2 = -f2p2 * p2p2 * p1p2 - f2p2 * p2p2 * d2 * b2 - f2p2 * p2p2 * d2
        + f2p2 * p2p4
        + p2p4 * f1p2
        + 2.0 * p_1 * p2p2 * d12
        + 2.0 * f_1 * f_2 * p_1 * p2p2 * d12 * b
        - p2p2 * p1p2 * f1p2
        + 2.0 * p_1 * p2p2 * f2p2 * d12
        - p2p2 * d2 * b2
        - 2.0 * p1p2 * p2p2;
    let c1 = 2.0 * p1p2 * p_2 * d12 * b + 2.0 * f_2 * p2p3 * f_1 * d12
        - 2.0 * f2p2 * p2p3 * d12 * b
        - 2.0 * p_1 * p_2 * d2 * b;
    let c0 = -2.0 * f_2 * p2p2 * f_1 * p_1 * d12 * b + f2p2 * p2p2 * d2 + 2.0 * p1p3 * d12
        - p1p2 * d2
        + f2p2 * p2p2 * p1p2
        - p1p4
        - 2.0 * f2p2 * p2p2 * p_1 * d12
        + p2p2 * f1p2 * p1p2
        + f2p2 * p2p2 * d2 * b2;

    let mut solutions = Vec::with_capacity(4);
    for cos_theta in real_quartic_roots([c4, c3, c2, c1, c0]) {
        if cos_theta.abs() > 1.0 + 1e-6 {
            continue;
        }
        let cos_theta = cos_theta.clamp(-1.0, 1.0);
        let cot_alpha = (-f_1 * p_1 / f_2 - cos_theta * p_2 + d12 * b)
            / (-f_1 * cos_theta * p_2 / f_2 + p_1 - d12);
        if !cot_alpha.is_finite() {
            continue;
        }
        let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
        let sin_alpha = (1.0 / (cot_alpha * cot_alpha + 1.0)).sqrt();
        let mut cos_alpha = (1.0 - sin_alpha * sin_alpha).sqrt();
        if cot_alpha < 0.0 {
            cos_alpha = -cos_alpha;
        }
        let k = d12 * sin_alpha * (sin_alpha * b + cos_alpha);
        let c = Vec3::new(
            d12 * cos_alpha * (sin_alpha * b + cos_alpha),
            cos_theta * k,
            sin_theta * k,
        );
        let center = p1 + n.transpose() * c;
        let r = Mat3::new(
            -cos_alpha,
            -sin_alpha * cos_theta,
            -sin_alpha * sin_theta,
            sin_alpha,
            -cos_alpha * cos_theta,
            -cos_alpha * sin_theta,
            0.0,
            -sin_theta,
            cos_theta,
        );
        let rotation = n.transpose() * r.transpose() * t;
        solutions.push((Rotation::from_matrix_unchecked(rotation), center));
    }
    Ok(solutions)
}

/// Real roots of `c[0] x⁴ + c[1] x³ + c[2] x² + c[3] x + c[4]` via the
/// companion-matrix eigenvalues, Newton-polished.
pub(crate) fn real_quartic_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || c[0].abs() < 1e-14 * scale {
        return Vec::new();
    }
    let a = [c[1] / c[0], c[2] / c[0], c[3] / c[0], c[4] / c[0]];
    let companion = Matrix4::new(
        -a[0], -a[1], -a[2], -a[3], //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let eval = |x: f64| (((x + a[0]) * x + a[1]) * x + a[2]) * x + a[3];
    let deriv = |x: f64| ((4.0 * x + 3.0 * a[0]) * x + 2.0 * a[1]) * x + a[2];
    let candidates: Vec<Complex<f64>> = match companion.try_schur(f64::EPSILON, 500) {
        Some(schur) => schur.complex_eigenvalues().iter().copied().collect(),
        None => durand_kerner(&a),
    };
    let mut roots = Vec::with_capacity(4);
    for z in candidates {
        if z.im.abs() > REAL_ROOT_TOLERANCE * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..8 {
            let d = deriv(x);
            if d == 0.0 {
                break;
            }
            let step = eval(x) / d;
            let next = x - step;
            if !next.is_finite() || eval(next).abs() > eval(x).abs() {
                break;
            }
            x = next;
            if step.abs() < 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        roots.push(x);
    }
    roots
}

/// Simultaneous iteration for the roots of the monic quartic with lower
/// coefficients `a`; used when the Schur iteration fails to converge.
fn durand_kerner(a: &[f64; 4]) -> Vec<Complex<f64>> {
    let eval = |z: Complex<f64>| (((z + a[0]) * z + a[1]) * z + a[2]) * z + a[3];
    let seed = Complex::new(0.4, 0.9);
    let radius = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut z: Vec<Complex<f64>> = (0..4).map(|i| seed.powu(i) * radius * 0.5).collect();
    for _ in 0..500 {
        let mut change: f64 = 0.0;
        for i in 0..4 {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..4 {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                continue;
            }
            let step = eval(z[i]) / denom;
            z[i] -= step;
            change = change.max(step.norm());
        }
        if change < 1e-15 * radius {
            break;
        }
    }
    z
}
