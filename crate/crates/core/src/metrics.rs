//! Evaluation metrics: Chamfer distance, foot contact quality and error
//! versus distance traveled. Lengths are reported in centimeters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{BodyPose, FootPart, Skeleton};
use crate::error::{Error, Result};
use crate::fusion::StageTimings;
use crate::rotmath::Vec3;
use crate::scene::{SceneIndex, ScenePointCloud};

/// Bidirectional Chamfer distance in centimeters: the mean of the mean
/// nearest-neighbour distances a→b and b→a. No alignment is applied.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let ia = SceneIndex::build(ScenePointCloud::new(a.to_vec(), None)?)?;
    let ib = SceneIndex::build(ScenePointCloud::new(b.to_vec(), None)?)?;
    let one_way = |from: &[Vec3], to: &SceneIndex| {
        from.par_iter().map(|p| to.nearest(p).distance).sum::<f64>() / from.len() as f64
    };
    Ok(50.0 * (one_way(a, &ib) + one_way(b, &ia)))
}

/// Joints, foot markers and camera point of a pose: the point set compared
/// by [`sequence_chamfer`].
pub fn body_points(sk: &Skeleton, pose: &BodyPose) -> Vec<Vec3> {
    let kin = sk.kinematics(&pose.theta, &pose.trans);
    let mut pts = kin.positions.to_vec();
    for part in FootPart::ALL {
        pts.extend(sk.markers(part).iter().map(|m| kin.marker(sk, m)));
    }
    pts.push(kin.camera_position(sk));
    pts
}

/// Per-frame Chamfer distance between body point sets, averaged over frames.
pub fn sequence_chamfer(result: &[BodyPose], truth: &[BodyPose], sk: &Skeleton) -> Result<f64> {
    if result.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: result.len(),
            right: truth.len(),
        });
    }
    if result.is_empty() {
        return Err(Error::EmptySet);
    }
    let per_frame: Vec<f64> = result
        .par_iter()
        .zip(truth)
        .map(|(r, t)| chamfer(&body_points(sk, r), &body_points(sk, t)))
        .collect::<Result<_>>()?;
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

/// Foot contact quality; a field is `None` when nothing was measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FootMetrics {
    /// Mean distance from contact-flagged markers to the nearest scene point.
    pub dist_to_surface_cm: Option<f64>,
    /// Mean horizontal displacement of contact-flagged markers between
    /// consecutive frames in which the part is in contact in both.
    pub sliding_cm: Option<f64>,
}

pub fn foot_metrics(
    poses: &[BodyPose],
    scene: &SceneIndex,
    contacts: &[[bool; 4]],
    sk: &Skeleton,
) -> Result<FootMetrics> {
    if poses.len() != contacts.len() {
        return Err(Error::LengthMismatch {
            left: poses.len(),
            right: contacts.len(),
        });
    }
    let markers: Vec<[Vec<Vec3>; 4]> = poses
        .par_iter()
        .map(|p| {
            let kin = sk.kinematics(&p.theta, &p.trans);
            FootPart::ALL.map(|part| sk.markers(part).iter().map(|m| kin.marker(sk, m)).collect())
        })
        .collect();
    let (dist_sum, dist_n) = (0..poses.len())
        .into_par_iter()
        .map(|j| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for k in 0..4 {
                if contacts[j][k] {
                    for m in &markers[j][k] {
                        sum += scene.nearest(m).distance;
                        n += 1;
                    }
                }
            }
            (sum, n)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mut slide_sum = 0.0;
    let mut slide_n = 0usize;
    for j in 1..poses.len() {
        for k in 0..4 {
            if contacts[j - 1][k] && contacts[j][k] {
                for (a, b) in markers[j - 1][k].iter().zip(&markers[j][k]) {
                    slide_sum += (a - b).xy().norm();
                    slide_n += 1;
                }
            }
        }
    }
    Ok(FootMetrics {
        dist_to_surface_cm: (dist_n > 0).then(|| 100.0 * dist_sum / dist_n as f64),
        sliding_cm: (slide_n > 0).then(|| 100.0 * slide_sum / slide_n as f64),
    })
}

/// Root error at a distance traveled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub distance_m: f64,
    pub error_cm: f64,
}

/// Milestones along the ground-truth path at which the error is sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSettings {
    pub milestones_m: Vec<f64>,
    /// Errors are averaged over frames whose distance traveled lies within
    /// half this width of the milestone; zero samples the nearest frame.
    pub window_m: f64,
}

impl Default for DriftSettings {
    fn default() -> Self {
        DriftSettings {
            milestones_m: vec![0.0, 70.0, 200.0, 380.0],
            window_m: 0.0,
        }
    }
}

/// Cumulative ground-truth path length and root error for every frame.
pub fn drift_profile(result: &[Vec3], truth: &[Vec3]) -> Result<Vec<DriftPoint>> {
    if result.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: result.len(),
            right: truth.len(),
        });
    }
    let mut traveled = 0.0;
    Ok(result
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(j, (r, t))| {
            if j > 0 {
                traveled += (t - truth[j - 1]).norm();
            }
            DriftPoint {
                distance_m: traveled,
                error_cm: 100.0 * (r - t).norm(),
            }
        })
        .collect())
}

/// The error profile sampled at the configured milestones. Milestones more
/// than one meter past the end of the path are omitted.
pub fn drift_curve(result: &[Vec3], truth: &[Vec3], settings: &DriftSettings) -> Result<Vec<DriftPoint>> {
    let profile = drift_profile(result, truth)?;
    let Some(total) = profile.last().map(|p| p.distance_m) else {
        return Ok(Vec::new());
    };
    let mut curve = Vec::new();
    for &m in &settings.milestones_m {
        if m > total + 1.0 {
            continue;
        }
        let half = 0.5 * settings.window_m;
        let window: Vec<f64> = profile
            .iter()
            .filter(|p| (p.distance_m - m).abs() <= half)
            .map(|p| p.error_cm)
            .collect();
        let error_cm = if window.is_empty() {
            profile
                .iter()
                .min_by(|a, b| (a.distance_m - m).abs().total_cmp(&(b.distance_m - m).abs()))
                .expect("non-empty profile")
                .error_cm
        } else {
            window.iter().sum::<f64>() / window.len() as f64
        };
        curve.push(DriftPoint {
            distance_m: m,
            error_cm,
        });
    }
    Ok(curve)
}

/// Drift curve as CSV with header `distance_m,error_cm`.
pub fn drift_csv(curve: &[DriftPoint]) -> String {
    let mut out = String::from("distance_m,error_cm\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.distance_m, p.error_cm));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chamfer_cm: f64,
    pub dist_to_surface_cm: Option<f64>,
    pub foot_sliding_cm: Option<f64>,
    pub drift_curve: Vec<DriftPoint>,
    /// Seconds spent computing the metrics.
    pub timings: MetricTimings,
    /// Stage timings of the run that produced the result, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<StageTimings>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTimings {
    pub evaluate_s: f64,
}

/// All metrics of a result against ground truth. Contact flags come from
/// the ground truth.
pub fn evaluate(
    result: &[BodyPose],
    truth: &[BodyPose],
    contacts: &[[bool; 4]],
    scene: &SceneIndex,
    sk: &Skeleton,
    drift: &DriftSettings,
) -> Result<MetricsReport> {
    let start = std::time::Instant::now();
    let chamfer_cm = sequence_chamfer(result, truth, sk)?;
    let foot = foot_metrics(result, scene, contacts, sk)?;
    let root = |p: &BodyPose| p.trans + sk.joints()[0].offset * sk.scale();
    let r: Vec<Vec3> = result.iter().map(root).collect();
    let t: Vec<Vec3> = truth.iter().map(root).collect();
    let drift_curve = drift_curve(&r, &t, drift)?;
    Ok(MetricsReport {
        chamfer_cm,
        dist_to_surface_cm: foot.dist_to_surface_cm,
        foot_sliding_cm: foot.sliding_cm,
        drift_curve,
        timings: MetricTimings {
            evaluate_s: start.elapsed().as_secs_f64(),
        },
        pipeline: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::foot_points;
    use crate::scene::plane_grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
        let one = |x: &[Vec3], y: &[Vec3]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        50.0 * (one(a, b) + one(b, a))
    }

    #[test]
    fn chamfer_examples() {
        let a: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let shifted: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.01, 0.0, 0.0)).collect();
        assert!((chamfer(&a, &shifted).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(chamfer(&a, &[]), Err(Error::EmptySet)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut random = |n: usize| -> Vec<Vec3> {
                (0..n)
                    .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                    .collect()
            };
            let (x, y) = (random(37), random(53));
            assert!((chamfer(&x, &y).unwrap() - brute_chamfer(&x, &y)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn chamfer_is_symmetric_and_non_negative(
            xs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..30),
            ys in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..30),
        ) {
            let a: Vec<Vec3> = xs.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let b: Vec<Vec3> = ys.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let ab = chamfer(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - chamfer(&b, &a).unwrap()).abs() < 1e-9);
        }
    }

    /// Standing pose with the feet on z = `height` and a scene holding a
    /// point right below every marker.
    fn standing(height: f64) -> (BodyPose, SceneIndex, Skeleton) {
        let sk = Skeleton::smpl_default();
        let mut pose = BodyPose::default();
        let z = foot_points(&sk, &pose, FootPart::LeftToe)[0].z;
        pose.trans.z = height - z;
        let mut pts = Vec::new();
        for part in FootPart::ALL {
            pts.extend(foot_points(&sk, &pose, part).iter().map(|p| Vec3::new(p.x, p.y, 0.0)));
        }
        let scene = SceneIndex::build(ScenePointCloud::new(pts, None).unwrap()).unwrap();
        (pose, scene, sk)
    }

    #[test]
    fn foot_metrics_examples() {
        let (pose, scene, sk) = standing(0.0);
        let m = foot_metrics(&[pose; 5], &scene, &[[true; 4]; 5], &sk).unwrap();
        assert!(m.dist_to_surface_cm.unwrap() < 1e-9);
        assert!(m.sliding_cm.unwrap() < 1e-9);

        let (raised, scene, sk) = standing(0.02);
        let m = foot_metrics(&[raised; 5], &scene, &[[true; 4]; 5], &sk).unwrap();
        assert!((m.dist_to_surface_cm.unwrap() - 2.0).abs() < 1e-9);
        assert!(m.sliding_cm.unwrap() < 1e-9);

        let m = foot_metrics(&[pose; 5], &scene, &[[false; 4]; 5], &sk).unwrap();
        assert_eq!(m, FootMetrics::default());

        let glide: Vec<BodyPose> = (0..6)
            .map(|j| BodyPose::new(pose.theta, pose.trans + Vec3::new(0.01 * j as f64, 0.0, 0.0)))
            .collect();
        let dense = SceneIndex::build(plane_grid(-1.0, -1.0, 201, 201, 0.01, 0.0)).unwrap();
        let m = foot_metrics(&glide, &dense, &[[true, false, false, false]; 6], &sk).unwrap();
        assert!((m.sliding_cm.unwrap() - 1.0).abs() < 1e-9);
        assert!(foot_metrics(&glide, &dense, &[[true; 4]; 5], &sk).is_err());
    }

    #[test]
    fn drift_examples() {
        let truth: Vec<Vec3> = (0..400).map(|j| Vec3::new(j as f64, 0.0, 1.0)).collect();
        let curve = drift_curve(&truth, &truth, &DriftSettings::default()).unwrap();
        assert_eq!(curve.len(), 4);
        assert!(curve.iter().all(|p| p.error_cm == 0.0));
        let offset: Vec<Vec3> = truth.iter().map(|p| p + Vec3::new(0.0, 0.05, 0.0)).collect();
        let curve = drift_curve(&offset, &truth, &DriftSettings::default()).unwrap();
        assert!(curve.iter().all(|p| (p.error_cm - 5.0).abs() < 1e-9));
        assert_eq!(
            curve.iter().map(|p| p.distance_m).collect::<Vec<_>>(),
            vec![0.0, 70.0, 200.0, 380.0]
        );
        let short = drift_curve(&truth[..100], &truth[..100], &DriftSettings::default()).unwrap();
        assert_eq!(short.len(), 2);
        assert!(matches!(
            drift_curve(&truth[..10], &truth[..11], &DriftSettings::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn drift_window_averages() {
        let truth: Vec<Vec3> = (0..101).map(|j| Vec3::new(j as f64, 0.0, 0.0)).collect();
        let result: Vec<Vec3> = truth.iter().map(|p| p + Vec3::new(0.0, 0.01 * p.x, 0.0)).collect();
        let settings = DriftSettings {
            milestones_m: vec![50.0],
            window_m: 10.0,
        };
        let curve = drift_curve(&result, &truth, &settings).unwrap();
        assert!((curve[0].error_cm - 50.0).abs() < 1e-9);
    }

    #[test]
    fn csv_has_header() {
        let csv = drift_csv(&[DriftPoint {
            distance_m: 70.0,
            error_cm: 1.5,
        }]);
        assert_eq!(csv, "distance_m,error_cm\n70,1.5\n");
    }
}
