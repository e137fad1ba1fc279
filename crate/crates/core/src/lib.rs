//! Drift-free human trajectory and pose recovery from body-mounted sensors.
//!
//! The crate fuses three sources of information about a walking subject:
//! an inertial motion-capture stream (accurate articulation, drifting global
//! pose), a head-mounted camera localized inside a pre-scanned scene (drift
//! free but noisy and outlier prone), and foot/scene contact. The pieces are:
//!
//! - [`rotmath`]: SO(3) exponential/logarithm maps and geodesic distance.
//! - [`body`]: a 24-joint kinematic skeleton with foot contact markers.
//! - [`scene`]: scene point clouds, exact nearest-neighbour index, PLY/JSON IO.
//! - [`localization`]: P3P + RANSAC camera localization and the camera
//!   trajectory outlier filter.
//! - [`alignment`]: IMU-to-scene frame registration and heading correction.
//! - [`fusion`]: the joint objective, its analytic gradient, the batch
//!   optimizer and the full sequence pipeline.
//! - [`simkit`]: synthetic ground-truth walks with configurable corruption.
//! - [`metrics`]: Chamfer distance, foot contact metrics and drift curves.
//! - [`formats`]: the JSON-lines file formats shared with the CLI.

pub mod alignment;
pub mod body;
pub mod error;
pub mod formats;
pub mod fusion;
pub mod localization;
pub mod metrics;
pub mod rotmath;
pub mod scene;
pub mod simkit;

pub use body::{BodyPose, FootPart, Skeleton, Theta, NUM_JOINTS};
pub use error::{Error, Result};
pub use rotmath::{AxisAngle, Mat3, Rotation, Vec3};
pub use scene::{SceneIndex, ScenePointCloud};
