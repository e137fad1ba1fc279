//! Per-frame sensor data.

use crate::body::{FootPart, Theta};
use crate::error::{Error, Result};
use crate::rotmath::{Rotation, Vec3};

/// Camera self-localization result attached to a frame. The orientation
/// uses body-style axes (x forward, y left, z up).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraObservation {
    pub rotation: Rotation,
    pub position: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub theta_imu: Theta,
    pub t_imu: Vec3,
    /// Contact flags indexed by [`FootPart::index`].
    pub contacts: [bool; 4],
    pub camera: Option<CameraObservation>,
}

impl Frame {
    pub fn contact(&self, part: FootPart) -> bool {
        self.contacts[part.index()]
    }

    fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && self.theta_imu.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.t_imu.iter().all(|x| x.is_finite())
            && self.camera.is_none_or(|c| {
                c.position.iter().all(|x| x.is_finite())
                    && c.rotation.matrix().iter().all(|x| x.is_finite())
            })
    }
}

/// Frames at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    frames: Vec<Frame>,
    rate_hz: f64,
}

impl Sequence {
    /// Validates finiteness and uniform, increasing timestamps (1e-6 s).
    pub fn new(frames: Vec<Frame>, rate_hz: f64) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidSequence(format!(
                "rate must be positive, got {rate_hz}"
            )));
        }
        if frames.len() < 2 {
            return Err(Error::InvalidSequence(format!(
                "need at least 2 frames, got {}",
                frames.len()
            )));
        }
        if let Some(index) = frames.iter().position(|f| !f.is_finite()) {
            return Err(Error::NonFinite {
                what: "sequence frame",
                index,
            });
        }
        let dt = 1.0 / rate_hz;
        for (i, pair) in frames.windows(2).enumerate() {
            let step = pair[1].timestamp - pair[0].timestamp;
            if (step - dt).abs() > 1e-6 || step <= 0.0 {
                return Err(Error::InvalidSequence(format!(
                    "timestamp step {step} s at frame {} does not match rate {rate_hz} Hz",
                    i + 1
                )));
            }
        }
        Ok(Sequence { frames, rate_hz })
    }

    /// Infers the rate from the first two timestamps.
    pub fn from_frames(frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidSequence(format!(
                "need at least 2 frames, got {}",
                frames.len()
            )));
        }
        let rate = 1.0 / (frames[1].timestamp - frames[0].timestamp);
        Self::new(frames, rate)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Frame] {
        &mut self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }
}
