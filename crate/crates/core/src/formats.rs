//! JSON-lines file formats for sequences, results, camera trajectories and
//! 2D-3D correspondences, plus the JSON documents for intrinsics and config.
//!
//! Quaternions are stored as `[w, x, y, z]`. Blank lines are ignored when
//! reading; every other line must hold exactly one record.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::body::{theta_from_slice, theta_to_vec, BodyPose};
use crate::error::{Error, Result};
use crate::fusion::{CameraObservation, FusionConfig, Frame, Sequence};
use crate::localization::{CameraIntrinsics, CameraPoseEstimate, CameraTrajectory, Correspondence};
use crate::rotmath::Rotation;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses one record per non-blank line; errors name `context` and the
/// 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, context: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                context: format!("{context} line {}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

fn schema(context: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        context: format!("{context} line {line}"),
        message: message.into(),
    }
}

fn quat_to_rotation(q: [f64; 4], context: &str, line: usize) -> Result<Rotation> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || (n - 1.0).abs() > 1e-3 {
        return Err(schema(context, line, format!("quaternion norm {n} is not 1")));
    }
    Rotation::from_quaternion_wxyz(q).map_err(|e| schema(context, line, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub theta_imu: Vec<f64>,
    pub t_imu: [f64; 3],
    pub contacts: [bool; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraRecord>,
}

pub fn sequence_to_jsonl(seq: &Sequence) -> String {
    let records: Vec<FrameRecord> = seq
        .frames()
        .iter()
        .map(|f| FrameRecord {
            timestamp: f.timestamp,
            theta_imu: theta_to_vec(&f.theta_imu),
            t_imu: f.t_imu.into(),
            contacts: f.contacts,
            camera: f.camera.map(|c| CameraRecord {
                q: c.rotation.to_quaternion_wxyz(),
                t: c.position.into(),
            }),
        })
        .collect();
    to_jsonl(&records)
}

pub fn sequence_from_jsonl(text: &str, context: &str) -> Result<Sequence> {
    let records: Vec<FrameRecord> = parse_jsonl(text, context)?;
    let frames = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let theta_imu =
                theta_from_slice(&r.theta_imu).map_err(|e| schema(context, i + 1, format!("theta_imu: {e}")))?;
            let camera = r
                .camera
                .map(|c| -> Result<CameraObservation> {
                    Ok(CameraObservation {
                        rotation: quat_to_rotation(c.q, context, i + 1)?,
                        position: c.t.into(),
                    })
                })
                .transpose()?;
            Ok(Frame {
                timestamp: r.timestamp,
                theta_imu,
                t_imu: r.t_imu.into(),
                contacts: r.contacts,
                camera,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Sequence::from_frames(frames)
}

pub fn read_sequence(path: &Path) -> Result<Sequence> {
    sequence_from_jsonl(&read_text(path)?, &path.display().to_string())
}

pub fn write_sequence(path: &Path, seq: &Sequence) -> Result<()> {
    write_text(path, &sequence_to_jsonl(seq))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub timestamp: f64,
    pub theta: Vec<f64>,
    pub trans: [f64; 3],
}

/// Optimized poses with their timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseTrack {
    pub timestamps: Vec<f64>,
    pub poses: Vec<BodyPose>,
}

impl PoseTrack {
    pub fn new(timestamps: Vec<f64>, poses: Vec<BodyPose>) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(Error::LengthMismatch {
                left: timestamps.len(),
                right: poses.len(),
            });
        }
        Ok(PoseTrack { timestamps, poses })
    }

    /// The ground-truth track of a sequence: its IMU poses.
    pub fn from_sequence(seq: &Sequence) -> Self {
        PoseTrack {
            timestamps: seq.timestamps(),
            poses: seq
                .frames()
                .iter()
                .map(|f| BodyPose::new(f.theta_imu, f.t_imu))
                .collect(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let records: Vec<ResultRecord> = self
            .timestamps
            .iter()
            .zip(&self.poses)
            .map(|(t, p)| ResultRecord {
                timestamp: *t,
                theta: theta_to_vec(&p.theta),
                trans: p.trans.into(),
            })
            .collect();
        to_jsonl(&records)
    }

    pub fn from_jsonl(text: &str, context: &str) -> Result<Self> {
        let records: Vec<ResultRecord> = parse_jsonl(text, context)?;
        let mut track = PoseTrack {
            timestamps: Vec::with_capacity(records.len()),
            poses: Vec::with_capacity(records.len()),
        };
        for (i, r) in records.into_iter().enumerate() {
            let theta = theta_from_slice(&r.theta).map_err(|e| schema(context, i + 1, format!("theta: {e}")))?;
            track.timestamps.push(r.timestamp);
            track.poses.push(BodyPose::new(theta, r.trans.into()));
        }
        Ok(track)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&read_text(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_jsonl())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub timestamp: f64,
    pub valid: bool,
    pub q: [f64; 4],
    pub t: [f64; 3],
}

/// Camera trajectory lines. Invalid estimates are written with an identity
/// quaternion and zero translation.
pub fn trajectory_to_jsonl(traj: &CameraTrajectory) -> String {
    let records: Vec<TrajectoryRecord> = traj
        .estimates()
        .iter()
        .map(|e| TrajectoryRecord {
            timestamp: e.timestamp,
            valid: e.valid,
            q: if e.valid {
                e.rotation.to_quaternion_wxyz()
            } else {
                [1.0, 0.0, 0.0, 0.0]
            },
            t: if e.valid { e.center.into() } else { [0.0; 3] },
        })
        .collect();
    to_jsonl(&records)
}

pub fn trajectory_from_jsonl(text: &str, context: &str) -> Result<CameraTrajectory> {
    let records: Vec<TrajectoryRecord> = parse_jsonl(text, context)?;
    let estimates = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(if r.valid {
                CameraPoseEstimate::new(quat_to_rotation(r.q, context, i + 1)?, r.t.into(), r.timestamp)
            } else {
                CameraPoseEstimate::invalid(r.timestamp)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CameraTrajectory::from_timestamps(estimates)
}

pub fn read_trajectory(path: &Path) -> Result<CameraTrajectory> {
    trajectory_from_jsonl(&read_text(path)?, &path.display().to_string())
}

pub fn write_trajectory(path: &Path, traj: &CameraTrajectory) -> Result<()> {
    write_text(path, &trajectory_to_jsonl(traj))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondenceRecord {
    pub timestamp: f64,
    pub pixels: Vec<[f64; 2]>,
    pub world: Vec<[f64; 3]>,
}

/// 2D-3D matches of one query frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatches {
    pub timestamp: f64,
    pub matches: Vec<Correspondence>,
}

pub fn matches_to_jsonl(frames: &[FrameMatches]) -> String {
    let records: Vec<CorrespondenceRecord> = frames
        .iter()
        .map(|f| CorrespondenceRecord {
            timestamp: f.timestamp,
            pixels: f.matches.iter().map(|c| c.pixel.into()).collect(),
            world: f.matches.iter().map(|c| c.world.into()).collect(),
        })
        .collect();
    to_jsonl(&records)
}

pub fn matches_from_jsonl(text: &str, context: &str) -> Result<Vec<FrameMatches>> {
    let records: Vec<CorrespondenceRecord> = parse_jsonl(text, context)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.pixels.len() != r.world.len() {
                return Err(schema(
                    context,
                    i + 1,
                    format!("{} pixels but {} world points", r.pixels.len(), r.world.len()),
                ));
            }
            Ok(FrameMatches {
                timestamp: r.timestamp,
                matches: r
                    .pixels
                    .iter()
                    .zip(&r.world)
                    .map(|(p, w)| Correspondence::new((*p).into(), (*w).into()))
                    .collect(),
            })
        })
        .collect()
}

pub fn read_matches(path: &Path) -> Result<Vec<FrameMatches>> {
    matches_from_jsonl(&read_text(path)?, &path.display().to_string())
}

pub fn write_matches(path: &Path, frames: &[FrameMatches]) -> Result<()> {
    write_text(path, &matches_to_jsonl(frames))
}

/// Reads a JSON document into `T`, naming the path on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let k: CameraIntrinsics = read_json(path)?;
    k.validate()?;
    Ok(k)
}

pub fn read_config(path: &Path) -> Result<FusionConfig> {
    let cfg: FusionConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}
