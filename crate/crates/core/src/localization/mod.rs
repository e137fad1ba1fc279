//! Structure-based camera localization and camera-trajectory cleanup.
//!
//! Cameras follow the computer-vision convention internally: a point `X` in
//! the scene frame maps to camera coordinates `x = Rᵀ (X − C)` with `z`
//! pointing forward, `x` right and `y` down, where `R` is the camera's
//! orientation (camera axes expressed in the scene frame) and `C` its centre.
//! [`vision_to_body_axes`] re-expresses such an orientation with the body
//! model's axes (x forward, y left, z up), which is the convention used for
//! camera orientations inside sequences.

mod filter;
mod p3p;
mod ransac;

pub use filter::{classify_outliers, filter_outliers, trajectory_velocity};
pub(crate) use filter::interpolate_outliers;
pub use p3p::p3p_solve;
pub use ransac::{ransac_localize, RansacOutcome, DEFAULT_ITERATIONS, DEFAULT_THRESHOLD_PX};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{Mat3, Rotation, Vec3};

pub type Vec2 = Vector2<f64>;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Projects a camera-frame point; `None` when it is not in front.
    pub fn project(&self, x: &Vec3) -> Option<Vec2> {
        (x.z > 0.0).then(|| Vec2::new(self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy))
    }

    /// Unit bearing vector of a pixel in the camera frame.
    pub fn bearing(&self, pixel: &Vec2) -> Vec3 {
        Vec3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0).normalize()
    }
}

/// One 2D-3D match.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub pixel: Vec2,
    pub world: Vec3,
}

impl Correspondence {
    pub fn new(pixel: Vec2, world: Vec3) -> Self {
        Correspondence { pixel, world }
    }

    pub fn is_finite(&self) -> bool {
        self.pixel.iter().chain(self.world.iter()).all(|v| v.is_finite())
    }
}

/// Camera pose in the scene frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPoseEstimate {
    pub rotation: Rotation,
    /// Camera centre in the scene frame (meters).
    pub center: Vec3,
    pub timestamp: f64,
    pub valid: bool,
}

impl CameraPoseEstimate {
    pub fn new(rotation: Rotation, center: Vec3, timestamp: f64) -> Self {
        CameraPoseEstimate {
            rotation,
            center,
            timestamp,
            valid: true,
        }
    }

    pub fn invalid(timestamp: f64) -> Self {
        CameraPoseEstimate {
            rotation: Rotation::identity(),
            center: Vec3::zeros(),
            timestamp,
            valid: false,
        }
    }

    /// Scene point expressed in camera coordinates.
    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation.matrix().transpose() * (world - self.center)
    }

    /// Pixel reprojection error of a correspondence; infinite when the point
    /// is behind the camera.
    pub fn reprojection_error(&self, k: &CameraIntrinsics, c: &Correspondence) -> f64 {
        k.project(&self.to_camera(&c.world))
            .map_or(f64::INFINITY, |p| (p - c.pixel).norm())
    }
}

/// Maps body-style axes (x forward, y left, z up) to vision axes.
fn body_in_vision() -> Mat3 {
    Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

/// Re-expresses a vision-convention camera orientation with body-style axes.
pub fn vision_to_body_axes(r: &Rotation) -> Rotation {
    Rotation::from_matrix_unchecked(r.matrix() * body_in_vision())
}

/// Inverse of [`vision_to_body_axes`].
pub fn body_to_vision_axes(r: &Rotation) -> Rotation {
    Rotation::from_matrix_unchecked(r.matrix() * body_in_vision().transpose())
}

/// Camera estimates sampled at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraTrajectory {
    estimates: Vec<CameraPoseEstimate>,
    rate_hz: f64,
}

impl CameraTrajectory {
    pub fn new(estimates: Vec<CameraPoseEstimate>, rate_hz: f64) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidTrajectory(format!("rate must be positive, got {rate_hz}")));
        }
        let dt = 1.0 / rate_hz;
        for (i, pair) in estimates.windows(2).enumerate() {
            let step = pair[1].timestamp - pair[0].timestamp;
            if step <= 0.0 {
                return Err(Error::InvalidTrajectory(format!(
                    "timestamps not strictly increasing at frame {}",
                    i + 1
                )));
            }
            if (step - dt).abs() > 1e-6 {
                return Err(Error::InvalidTrajectory(format!(
                    "non-uniform spacing at frame {}: {step} s instead of {dt} s",
                    i + 1
                )));
            }
        }
        for (i, e) in estimates.iter().enumerate() {
            if e.valid && !e.center.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "camera centre",
                    index: i,
                });
            }
        }
        Ok(CameraTrajectory { estimates, rate_hz })
    }

    /// Infers the rate from the first timestamp step (needs ≥ 2 entries).
    pub fn from_timestamps(estimates: Vec<CameraPoseEstimate>) -> Result<Self> {
        if estimates.len() < 2 {
            return Err(Error::InvalidTrajectory(
                "need at least two estimates to infer the rate".into(),
            ));
        }
        let rate = 1.0 / (estimates[1].timestamp - estimates[0].timestamp);
        Self::new(estimates, rate)
    }

    pub fn estimates(&self) -> &[CameraPoseEstimate] {
        &self.estimates
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn into_estimates(self) -> Vec<CameraPoseEstimate> {
        self.estimates
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn bearing_projects_back() {
        let k = testutil::intrinsics();
        let px = Vec2::new(100.0, 400.0);
        let b = k.bearing(&px);
        assert!((b.norm() - 1.0).abs() < 1e-15);
        assert!((k.project(&(b * 3.0)).unwrap() - px).norm() < 1e-12);
        assert!(k.project(&Vec3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn axis_conventions() {
        let body = vision_to_body_axes(&Rotation::identity());
        // Body forward is the vision optical axis.
        assert_eq!(body * Vec3::x(), Vec3::z());
        assert_eq!(body * Vec3::z(), -Vec3::y());
        let back = body_to_vision_axes(&body);
        assert_eq!(back, Rotation::identity());
        assert!(Rotation::new(*body.matrix()).is_ok());
    }

    #[test]
    fn trajectory_validation() {
        let mk = |t: f64| CameraPoseEstimate::new(Rotation::identity(), Vec3::zeros(), t);
        assert!(CameraTrajectory::new(vec![mk(0.0), mk(0.1), mk(0.2)], 10.0).is_ok());
        assert!(CameraTrajectory::new(vec![mk(0.0), mk(0.1), mk(0.1)], 10.0).is_err());
        assert!(CameraTrajectory::new(vec![mk(0.0), mk(0.1), mk(0.25)], 10.0).is_err());
        assert!(CameraTrajectory::new(vec![mk(0.0)], 0.0).is_err());
    }
}
