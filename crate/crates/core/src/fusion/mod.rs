//! Joint optimization of body pose and translation from IMU, camera and
//! scene-contact evidence.
//!
//! The energy over a batch of frames is
//!
//! ```text
//! E = w_s E_self + w_sc (w_c E_contact + w_v E_slide)
//!   + w_sm (w_T E_T + w_G E_G + w_H E_H) + w_p E_IMU
//! ```
//!
//! with every un-squared norm smoothed as `sqrt(x² + μ²) − μ`
//! ([`SMOOTHING_MU`]) so the energy is differentiable where residuals
//! vanish.

mod objective;
mod optimizer;
mod pipeline;
mod sequence;

pub use objective::{
    e_contact, e_imu, e_self, e_slide, e_smooth, evaluate_objective, gradient, Batch,
    EnergyBreakdown, Objective, SMOOTHING_MU,
};
pub use optimizer::{minimize, LbfgsSettings, MinimizeReport, Problem, StopReason};
pub use pipeline::{
    batch_ranges, fuse_sequence, initialize_batch, optimize_batch, run_baseline, Baseline,
    BatchSummary, FusionResult, Initialization, SequenceResult, StageTimings,
};
pub use sequence::{CameraObservation, Frame, Sequence};

use serde::{Deserialize, Serialize};

use crate::alignment::HeadingVariant;
use crate::error::{Error, Result};

/// Term weights, batching and optimizer settings.
///
/// The defaults were tuned on the synthetic suite; none of them are
/// published values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Camera-orientation agreement.
    pub w_s: f64,
    /// Scene terms as a whole.
    pub w_sc: f64,
    /// Foot-to-scene contact.
    pub w_c: f64,
    /// Foot sliding.
    pub w_v: f64,
    /// Smoothness terms as a whole.
    pub w_sm: f64,
    /// Translation smoothness.
    #[serde(rename = "w_T")]
    pub w_t: f64,
    /// Root-orientation smoothness.
    #[serde(rename = "w_G")]
    pub w_g: f64,
    /// Head-orientation smoothness.
    #[serde(rename = "w_H")]
    pub w_h: f64,
    /// Articulation prior towards the IMU pose.
    pub w_p: f64,
    /// Frames per optimized batch.
    pub batch_len: usize,
    /// Frames shared by consecutive batches and blended when stitching.
    pub overlap: usize,
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tolerance: f64,
    /// Curvature pairs kept by the quasi-Newton optimizer.
    pub history: usize,
    pub heading: HeadingVariant,
    /// Camera outlier velocity threshold (m/s).
    pub velocity_threshold: f64,
    /// Frame offset for trajectory tangents.
    pub gamma: usize,
    /// Time constant (s) of the blend between camera positions and IMU
    /// translation steps used to initialize translations; 0 uses the
    /// filtered camera positions directly.
    pub init_smoothing_s: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            w_s: 1.0,
            w_sc: 1.0,
            w_c: 1.0,
            w_v: 10.0,
            w_sm: 1.0,
            w_t: 0.5,
            w_g: 0.5,
            w_h: 0.5,
            w_p: 10.0,
            batch_len: 300,
            overlap: 30,
            max_iterations: 500,
            grad_tolerance: 1e-6,
            history: 10,
            heading: HeadingVariant::Exact,
            velocity_threshold: 3.0,
            gamma: 10,
            init_smoothing_s: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w_s", self.w_s),
            ("w_sc", self.w_sc),
            ("w_c", self.w_c),
            ("w_v", self.w_v),
            ("w_sm", self.w_sm),
            ("w_T", self.w_t),
            ("w_G", self.w_g),
            ("w_H", self.w_h),
            ("w_p", self.w_p),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        if self.batch_len < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch_len must be at least 2, got {}",
                self.batch_len
            )));
        }
        if self.overlap >= self.batch_len {
            return Err(Error::InvalidConfig(format!(
                "overlap {} must be smaller than batch_len {}",
                self.overlap, self.batch_len
            )));
        }
        if !(self.grad_tolerance.is_finite() && self.grad_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("grad_tolerance must be non-negative".into()));
        }
        if self.history == 0 {
            return Err(Error::InvalidConfig("history must be at least 1".into()));
        }
        if !(self.velocity_threshold.is_finite() && self.velocity_threshold > 0.0) {
            return Err(Error::InvalidConfig("velocity_threshold must be positive".into()));
        }
        if self.gamma == 0 {
            return Err(Error::InvalidConfig("gamma must be at least 1".into()));
        }
        if !(self.init_smoothing_s.is_finite() && self.init_smoothing_s >= 0.0) {
            return Err(Error::InvalidConfig("init_smoothing_s must be non-negative".into()));
        }
        Ok(())
    }

    /// All weights set to zero; handy for isolating single terms.
    pub fn zero_weights() -> Self {
        FusionConfig {
            w_s: 0.0,
            w_sc: 0.0,
            w_c: 0.0,
            w_v: 0.0,
            w_sm: 0.0,
            w_t: 0.0,
            w_g: 0.0,
            w_h: 0.0,
            w_p: 0.0,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_uses_documented_names() {
        let json = serde_json::to_value(FusionConfig::default()).unwrap();
        for key in ["w_s", "w_sc", "w_c", "w_v", "w_sm", "w_T", "w_G", "w_H", "w_p"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["heading"], "exact");
        let partial: FusionConfig = serde_json::from_str(r#"{"w_sc": 0.0, "batch_len": 50}"#).unwrap();
        assert_eq!(partial.w_sc, 0.0);
        assert_eq!(partial.batch_len, 50);
        assert_eq!(partial.w_p, 10.0);
        assert!(serde_json::from_str::<FusionConfig>(r#"{"w_x": 1}"#).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig {
            w_c: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FusionConfig {
            batch_len: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FusionConfig {
            overlap: 300,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
