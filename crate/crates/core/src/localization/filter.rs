//! Velocity-based outlier rejection and gap interpolation for camera
//! trajectories.

use super::{CameraPoseEstimate, CameraTrajectory};
use crate::error::{Error, Result};
use crate::rotmath::interpolate;

/// Translation speed (m/s) between frame `j` and its nearest valid
/// neighbours, normalized by the frame gap; the larger of the two sides.
pub fn trajectory_velocity(traj: &CameraTrajectory, j: usize) -> Result<f64> {
    let valid: Vec<bool> = traj.estimates().iter().map(|e| e.valid).collect();
    velocity_with(traj, &valid, j).ok_or(Error::IsolatedFrame(j))
}

fn velocity_with(traj: &CameraTrajectory, inlier: &[bool], j: usize) -> Option<f64> {
    let est = traj.estimates();
    let speed = |k: usize| {
        (est[j].center - est[k].center).norm() * traj.rate_hz() / j.abs_diff(k) as f64
    };
    let prev = (0..j).rev().find(|&k| inlier[k]).map(speed);
    let next = (j + 1..est.len()).find(|&k| inlier[k]).map(speed);
    match (prev, next) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// Marks every frame that is invalid or rejected by the velocity test
/// (`true` = outlier).
///
/// The surviving inliers are the longest chain of valid frames in which
/// every pair of consecutive members moves no faster than `eps` (gap
/// normalized). Within that set every inlier passes the velocity test
/// against its nearest inlier neighbours, so the result is a fixed point of
/// the iterative rejection rule; choosing the longest such chain keeps an
/// isolated spike from also condemning the honest frames next to it.
pub fn classify_outliers(traj: &CameraTrajectory, eps: f64) -> Result<Vec<bool>> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "velocity threshold must be positive, got {eps}"
        )));
    }
    let est = traj.estimates();
    let candidates: Vec<usize> = (0..est.len()).filter(|&i| est[i].valid).collect();
    if candidates.len() < 2 {
        return Err(Error::UnrecoverableTrajectory {
            inliers: candidates.len(),
        });
    }
    let step = eps / traj.rate_hz();
    let m = candidates.len();
    let mut length = vec![1usize; m];
    let mut pred = vec![usize::MAX; m];
    for a in 0..m {
        let ja = candidates[a];
        let mut best = 1;
        let mut best_pred = usize::MAX;
        for b in (0..a).rev() {
            // A chain ending at b has at most b + 1 members.
            if best >= b + 2 {
                break;
            }
            let jb = candidates[b];
            let reach = step * (ja - jb) as f64;
            if length[b] + 1 > best && (est[ja].center - est[jb].center).norm() <= reach {
                best = length[b] + 1;
                best_pred = b;
            }
        }
        length[a] = best;
        pred[a] = best_pred;
    }
    let (mut cur, &longest) = length
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(&x.0)))
        .expect("non-empty");
    if longest < 2 {
        return Err(Error::UnrecoverableTrajectory { inliers: longest });
    }
    let mut outlier = vec![true; est.len()];
    loop {
        outlier[candidates[cur]] = false;
        if pred[cur] == usize::MAX {
            break;
        }
        cur = pred[cur];
    }
    Ok(outlier)
}

/// Replaces outliers and invalid frames: positions by linear and
/// orientations by geodesic interpolation between the surrounding inliers;
/// frames before the first or after the last inlier hold that inlier.
/// Inlier frames are returned untouched.
pub fn filter_outliers(traj: &CameraTrajectory, eps: f64) -> Result<CameraTrajectory> {
    let outlier = classify_outliers(traj, eps)?;
    Ok(interpolate_outliers(traj, &outlier))
}

pub(crate) fn interpolate_outliers(traj: &CameraTrajectory, outlier: &[bool]) -> CameraTrajectory {
    let est = traj.estimates();
    let inliers: Vec<usize> = (0..est.len()).filter(|&i| !outlier[i]).collect();
    let mut out = est.to_vec();
    let mut next_pos = 0usize;
    for (j, slot) in out.iter_mut().enumerate() {
        if !outlier[j] {
            next_pos += 1;
            continue;
        }
        let prev = next_pos.checked_sub(1).map(|p| inliers[p]);
        let next = inliers.get(next_pos).copied();
        let (rotation, center) = match (prev, next) {
            (Some(k), Some(l)) => {
                let s = (j - k) as f64 / (l - k) as f64;
                (
                    interpolate(&est[k].rotation, &est[l].rotation, s),
                    est[k].center + (est[l].center - est[k].center) * s,
                )
            }
            (Some(k), None) | (None, Some(k)) => (est[k].rotation, est[k].center),
            (None, None) => unreachable!("at least two inliers"),
        };
        *slot = CameraPoseEstimate {
            rotation,
            center,
            timestamp: est[j].timestamp,
            valid: true,
        };
    }
    CameraTrajectory::new(out, traj.rate_hz()).expect("timestamps unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::{Rotation, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn walk(n: usize, rate: f64, speed: f64) -> CameraTrajectory {
        let est = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                CameraPoseEstimate::new(Rotation::rot_z(0.01 * i as f64), Vec3::new(speed * t, 0.0, 1.6), t)
            })
            .collect();
        CameraTrajectory::new(est, rate).unwrap()
    }

    fn loop_traj(n: usize, rate: f64) -> CameraTrajectory {
        let est = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let a = t * 1.2 / 5.0;
                CameraPoseEstimate::new(
                    Rotation::rot_z(a + std::f64::consts::FRAC_PI_2),
                    Vec3::new(5.0 * a.cos(), 5.0 * a.sin(), 1.6),
                    t,
                )
            })
            .collect();
        CameraTrajectory::new(est, rate).unwrap()
    }

    fn with(traj: &CameraTrajectory, mut f: impl FnMut(usize, &mut CameraPoseEstimate)) -> CameraTrajectory {
        let mut est = traj.estimates().to_vec();
        for (i, e) in est.iter_mut().enumerate() {
            f(i, e);
        }
        CameraTrajectory::new(est, traj.rate_hz()).unwrap()
    }

    #[test]
    fn velocity_examples() {
        let still = with(&walk(10, 30.0, 0.0), |_, _| {});
        assert_eq!(trajectory_velocity(&still, 4).unwrap(), 0.0);

        let step = with(&walk(10, 30.0, 0.0), |i, e| {
            if i >= 5 {
                e.center.x += 1.0;
            }
        });
        assert!((trajectory_velocity(&step, 5).unwrap() - 30.0).abs() < 1e-9);

        let gap = with(&step, |i, e| {
            if i == 3 || i == 4 {
                e.valid = false;
            }
        });
        assert!((trajectory_velocity(&gap, 5).unwrap() - 10.0).abs() < 1e-9);

        let isolated = with(&walk(3, 30.0, 1.0), |i, e| e.valid = i == 1);
        assert!(matches!(
            trajectory_velocity(&isolated, 1),
            Err(Error::IsolatedFrame(1))
        ));
    }

    #[test]
    fn single_displaced_sample_is_replaced_by_midpoint() {
        let clean = walk(60, 30.0, 1.0);
        let spiked = with(&clean, |i, e| {
            if i == 20 {
                e.center.y += 1.0;
            }
        });
        let mask = classify_outliers(&spiked, 3.0).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 1);
        assert!(mask[20]);
        let filtered = filter_outliers(&spiked, 3.0).unwrap();
        let e = clean.estimates();
        let mid = (e[19].center + e[21].center) / 2.0;
        assert!((filtered.estimates()[20].center - mid).norm() < 1e-12);
        for i in (0..60).filter(|&i| i != 20) {
            assert_eq!(filtered.estimates()[i], spiked.estimates()[i]);
        }
    }

    #[test]
    fn clean_trajectory_is_a_fixed_point() {
        let clean = loop_traj(300, 30.0);
        assert_eq!(filter_outliers(&clean, 3.0).unwrap(), clean);
    }

    #[test]
    fn spikes_are_recalled_and_filter_is_idempotent() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = loop_traj(900, 30.0);
            let mut spiked_frames = Vec::new();
            let noisy = with(&clean, |i, e| {
                if rng.random::<f64>() < 0.1 {
                    let d = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    e.center += d.normalize() * 5.0;
                    spiked_frames.push(i);
                }
            });
            let mask = classify_outliers(&noisy, 3.0).unwrap();
            let caught = spiked_frames.iter().filter(|&&i| mask[i]).count();
            assert!(caught as f64 >= 0.95 * spiked_frames.len() as f64, "seed {seed}");
            let once = filter_outliers(&noisy, 3.0).unwrap();
            for i in 0..900 {
                if !spiked_frames.contains(&i) {
                    assert_eq!(once.estimates()[i].center, clean.estimates()[i].center);
                }
                if !mask[i] {
                    assert_eq!(once.estimates()[i], noisy.estimates()[i]);
                }
            }
            let twice = filter_outliers(&once, 3.0).unwrap();
            assert_eq!(once, twice, "seed {seed}");
        }
    }

    #[test]
    fn endpoints_hold_nearest_inlier() {
        let clean = walk(30, 30.0, 1.0);
        let broken = with(&clean, |i, e| {
            if i < 3 || i > 26 {
                e.valid = false;
            }
        });
        let out = filter_outliers(&broken, 3.0).unwrap();
        let e = out.estimates();
        assert_eq!(e[0].center, clean.estimates()[3].center);
        assert_eq!(e[29].center, clean.estimates()[26].center);
        assert!(e.iter().all(|x| x.valid));
    }

    #[test]
    fn too_few_inliers_is_unrecoverable() {
        let only_one = with(&walk(10, 30.0, 1.0), |i, e| e.valid = i == 4);
        assert!(matches!(
            filter_outliers(&only_one, 3.0),
            Err(Error::UnrecoverableTrajectory { inliers: 1 })
        ));
        // Two valid frames that are mutually inconsistent.
        let clash = with(&walk(10, 30.0, 1.0), |i, e| {
            e.valid = i == 2 || i == 3;
            if i == 3 {
                e.center.x += 10.0;
            }
        });
        assert!(matches!(
            filter_outliers(&clash, 3.0),
            Err(Error::UnrecoverableTrajectory { inliers: 1 })
        ));
    }
}
