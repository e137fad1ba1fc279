//! Robust pose estimation from many correspondences.

use nalgebra::{Matrix2x3, Matrix6, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::p3p::p3p_solve;
use super::{CameraIntrinsics, CameraPoseEstimate, Correspondence};
use crate::error::{Error, Result};
use crate::rotmath::{exp_matrix, hat, Rotation, Vec3};

/// Default inlier threshold in pixels (not a published value).
pub const DEFAULT_THRESHOLD_PX: f64 = 4.0;
/// Default hypothesis budget (not a published value).
pub const DEFAULT_ITERATIONS: usize = 1000;

const MIN_INLIERS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RansacOutcome {
    /// Marked invalid when no hypothesis reached four inliers.
    pub estimate: CameraPoseEstimate,
    pub inliers: Vec<bool>,
    /// Inlier count of the best hypothesis before local optimization.
    pub hypothesis_inliers: usize,
}

impl RansacOutcome {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// RANSAC over P3P hypotheses followed by reprojection-error refinement on
/// the inlier set. Deterministic for a given seed.
pub fn ransac_localize(
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    px_threshold: f64,
    max_iter: usize,
    seed: u64,
) -> Result<RansacOutcome> {
    k.validate()?;
    if cs.len() < MIN_INLIERS {
        return Err(Error::InsufficientCorrespondences {
            got: cs.len(),
            need: MIN_INLIERS,
        });
    }
    if let Some(index) = cs.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            what: "correspondence",
            index,
        });
    }
    if !(px_threshold.is_finite() && px_threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "inlier threshold must be positive, got {px_threshold}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(CameraPoseEstimate, usize)> = None;
    for _ in 0..max_iter {
        let idx = sample(&mut rng, cs.len(), 4);
        let minimal = [cs[idx.index(0)], cs[idx.index(1)], cs[idx.index(2)]];
        let check = &cs[idx.index(3)];
        let Ok(solutions) = p3p_solve(&minimal, k) else {
            continue;
        };
        let Some(hypothesis) = solutions
            .into_iter()
            .map(|s| (s.reprojection_error(k, check), s))
            .filter(|(e, _)| e.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, s)| s)
        else {
            continue;
        };
        let count = count_inliers(&hypothesis, cs, k, px_threshold);
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((hypothesis, count));
        }
    }

    let Some((mut estimate, hypothesis_inliers)) = best.filter(|(_, c)| *c >= MIN_INLIERS) else {
        return Ok(RansacOutcome {
            estimate: CameraPoseEstimate::invalid(0.0),
            inliers: vec![false; cs.len()],
            hypothesis_inliers: best.map_or(0, |b| b.1),
        });
    };

    let mut mask = inlier_mask(&estimate, cs, k, px_threshold);
    let mut count = hypothesis_inliers;
    for _ in 0..5 {
        let subset: Vec<Correspondence> = cs
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| *c)
            .collect();
        let Some(refined) = refine_pose(&estimate, &subset, k, 50) else {
            break;
        };
        let refined_mask = inlier_mask(&refined, cs, k, px_threshold);
        let refined_count = refined_mask.iter().filter(|&&b| b).count();
        if refined_count < count {
            break;
        }
        let unchanged = refined_mask == mask;
        estimate = refined;
        mask = refined_mask;
        count = refined_count;
        if unchanged {
            break;
        }
    }

    Ok(RansacOutcome {
        estimate,
        inliers: mask,
        hypothesis_inliers,
    })
}

fn inlier_mask(
    est: &CameraPoseEstimate,
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    threshold: f64,
) -> Vec<bool> {
    cs.iter()
        .map(|c| est.reprojection_error(k, c) < threshold)
        .collect()
}

fn count_inliers(
    est: &CameraPoseEstimate,
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    threshold: f64,
) -> usize {
    cs.iter()
        .filter(|c| est.reprojection_error(k, c) < threshold)
        .count()
}

/// Squared reprojection error summed over `cs`; `None` if any point is
/// behind the camera.
fn reprojection_cost(est: &CameraPoseEstimate, cs: &[Correspondence], k: &CameraIntrinsics) -> Option<f64> {
    let mut cost = 0.0;
    for c in cs {
        let p = k.project(&est.to_camera(&c.world))?;
        cost += (p - c.pixel).norm_squared();
    }
    Some(cost)
}

/// Levenberg-Marquardt minimization of the squared reprojection error over
/// camera orientation (right perturbation) and centre. `None` when the start
/// pose has points behind the camera.
pub(crate) fn refine_pose(
    start: &CameraPoseEstimate,
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    max_iter: usize,
) -> Option<CameraPoseEstimate> {
    let mut est = *start;
    let mut cost = reprojection_cost(&est, cs, k)?;
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        if cost < 1e-24 {
            break;
        }
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        let rt = est.rotation.matrix().transpose();
        for c in cs {
            let x = rt * (c.world - est.center);
            let iz = 1.0 / x.z;
            let u = Vec3::new(k.fx * x.x * iz + k.cx, k.fy * x.y * iz + k.cy, 0.0);
            let r = nalgebra::Vector2::new(u.x - c.pixel.x, u.y - c.pixel.y);
            let dproj = Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * x.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * x.y * iz * iz,
            );
            let j_rot = dproj * hat(&x);
            let j_c = -(dproj * rt);
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&j_rot);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&j_c);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * (h[(i, i)] + 1e-12);
            }
            let Some(delta) = damped.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            let dw = Vec3::new(delta[0], delta[1], delta[2]);
            let dc = Vec3::new(delta[3], delta[4], delta[5]);
            let candidate = CameraPoseEstimate {
                rotation: Rotation::from_matrix_unchecked(est.rotation.matrix() * exp_matrix(&dw)),
                center: est.center + dc,
                ..est
            };
            match reprojection_cost(&candidate, cs, k) {
                Some(c) if c < cost => {
                    let small = delta.norm() < 1e-14 * (1.0 + est.center.norm());
                    est = candidate;
                    cost = c;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = !small;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    Some(est)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::rotmath::geodesic_distance;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn scene(rng: &mut ChaCha8Rng, cam: &CameraPoseEstimate, n: usize) -> Vec<Correspondence> {
        (0..n).map(|_| observe(cam, visible_point(rng, cam))).collect()
    }

    #[test]
    fn too_few_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cam = random_camera(&mut rng);
        let cs = scene(&mut rng, &cam, 3);
        assert!(matches!(
            ransac_localize(&cs, &intrinsics(), 4.0, 100, 0),
            Err(Error::InsufficientCorrespondences { got: 3, need: 4 })
        ));
    }

    #[test]
    fn noiseless_inliers_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cam = random_camera(&mut rng);
        let cs = scene(&mut rng, &cam, 100);
        let out = ransac_localize(&cs, &intrinsics(), 4.0, 200, 3).unwrap();
        assert!(out.estimate.valid);
        assert_eq!(out.inlier_count(), 100);
        assert!(geodesic_distance(&out.estimate.rotation, &cam.rotation).unwrap() < 1e-9);
        assert!((out.estimate.center - cam.center).norm() < 1e-9);
    }

    #[test]
    fn noisy_with_outliers() {
        let k = intrinsics();
        let noise = Normal::new(0.0, 1.0).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let cam = random_camera(&mut rng);
            let mut cs = scene(&mut rng, &cam, 70);
            for c in cs.iter_mut() {
                c.pixel.x += noise.sample(&mut rng);
                c.pixel.y += noise.sample(&mut rng);
            }
            for _ in 0..30 {
                let world = visible_point(&mut rng, &cam);
                let pixel = super::super::Vec2::new(
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                );
                cs.push(Correspondence::new(pixel, world));
            }
            let out = ransac_localize(&cs, &k, 4.0, 1000, seed).unwrap();
            let err = geodesic_distance(&out.estimate.rotation, &cam.rotation).unwrap();
            assert!(out.inlier_count() >= 65, "seed {seed}: {}", out.inlier_count());
            assert!(out.inlier_count() >= out.hypothesis_inliers);
            assert!(err < 0.01, "seed {seed}: {err}");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = random_camera(&mut rng);
        let mut cs = scene(&mut rng, &cam, 40);
        for c in cs.iter_mut().take(15) {
            c.pixel.x += 50.0;
        }
        let a = ransac_localize(&cs, &intrinsics(), 4.0, 300, 9).unwrap();
        let b = ransac_localize(&cs, &intrinsics(), 4.0, 300, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_consensus_is_invalid() {
        // Any three points are fit exactly, so with four generic random
        // matches every hypothesis has exactly three inliers.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cam = random_camera(&mut rng);
        let mut cs = scene(&mut rng, &cam, 4);
        cs[3].pixel.x += 80.0;
        cs[3].pixel.y -= 60.0;
        let out = ransac_localize(&cs, &intrinsics(), 1.0, 50, 0).unwrap();
        assert!(!out.estimate.valid);
        assert_eq!(out.inlier_count(), 0);
        assert_eq!(out.hypothesis_inliers, 3);
    }
}
