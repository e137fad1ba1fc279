//! Articulated body model.
//!
//! A 24-joint kinematic tree with the SMPL topology. Each joint carries an
//! axis-angle rotation relative to its parent; the root additionally carries
//! the global translation. Four foot parts (toe/heel, left/right) are
//! represented by small sets of markers rigidly attached to a foot joint,
//! standing in for mesh vertex sets on the foot sole.
//!
//! Axis convention: x forward, y left, z up.

use std::path::Path;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{exp_matrix, right_jacobian, Mat3, Rotation, Vec3};

pub const NUM_JOINTS: usize = 24;

/// Pose variables per frame: 72 joint angles followed by 3 translations.
pub const POSE_DOF: usize = 3 * NUM_JOINTS + 3;

/// Joint rotations of one pose; entry 0 is the root (global) orientation.
pub type Theta = [Vec3; NUM_JOINTS];

pub fn zero_theta() -> Theta {
    [Vec3::zeros(); NUM_JOINTS]
}

/// Reads 72 numbers into a [`Theta`].
pub fn theta_from_slice(values: &[f64]) -> Result<Theta> {
    if values.len() != 3 * NUM_JOINTS {
        return Err(Error::DimensionMismatch {
            expected: 3 * NUM_JOINTS,
            got: values.len(),
        });
    }
    let mut theta = zero_theta();
    for (t, chunk) in theta.iter_mut().zip(values.chunks_exact(3)) {
        *t = Vec3::new(chunk[0], chunk[1], chunk[2]);
    }
    Ok(theta)
}

pub fn theta_to_vec(theta: &Theta) -> Vec<f64> {
    theta.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FootPart {
    LeftToe = 0,
    LeftHeel = 1,
    RightToe = 2,
    RightHeel = 3,
}

impl FootPart {
    pub const ALL: [FootPart; 4] = [
        FootPart::LeftToe,
        FootPart::LeftHeel,
        FootPart::RightToe,
        FootPart::RightHeel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FootPart::LeftToe => "left_toe",
            FootPart::LeftHeel => "left_heel",
            FootPart::RightToe => "right_toe",
            FootPart::RightHeel => "right_heel",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, in the parent frame (meters).
    pub offset: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootMarker {
    pub joint: usize,
    /// Offset in the frame of `joint` (meters, before scaling).
    pub offset: Vec3,
}

/// Pose plus root translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyPose {
    pub theta: Theta,
    pub trans: Vec3,
}

impl Default for BodyPose {
    fn default() -> Self {
        BodyPose {
            theta: zero_theta(),
            trans: Vec3::zeros(),
        }
    }
}

impl BodyPose {
    pub fn new(theta: Theta, trans: Vec3) -> Self {
        BodyPose { theta, trans }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.trans.iter().all(|x| x.is_finite())
    }

    /// Writes the pose into a 75-entry variable block.
    pub fn write_vars(&self, out: &mut [f64]) {
        for (i, v) in self.theta.iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
        }
        out[72..75].copy_from_slice(self.trans.as_slice());
    }

    pub fn from_vars(vars: &[f64]) -> Self {
        let mut theta = zero_theta();
        for (i, t) in theta.iter_mut().enumerate() {
            *t = Vec3::new(vars[3 * i], vars[3 * i + 1], vars[3 * i + 2]);
        }
        BodyPose {
            theta,
            trans: Vec3::new(vars[72], vars[73], vars[74]),
        }
    }
}

/// World rotations and positions of every joint.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTransforms {
    pub rotations: Vec<Rotation>,
    pub positions: Vec<Vec3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    head_chain: Vec<usize>,
    foot_markers: [Vec<FootMarker>; 4],
    scale: f64,
    camera_offset: Vec3,
}

impl Skeleton {
    pub fn new(
        joints: Vec<Joint>,
        head_chain: Vec<usize>,
        foot_markers: [Vec<FootMarker>; 4],
        scale: f64,
        camera_offset: Vec3,
    ) -> Result<Self> {
        let fail = |msg: String| Err(Error::InvalidSkeleton(msg));
        if joints.len() != NUM_JOINTS {
            return fail(format!("expected {NUM_JOINTS} joints, got {}", joints.len()));
        }
        for (i, joint) in joints.iter().enumerate() {
            match (i, joint.parent) {
                (0, None) => {}
                (0, Some(_)) => return fail("joint 0 must be the root".into()),
                (_, None) => return fail(format!("joint {i} ({}) has no parent", joint.name)),
                (_, Some(p)) if p >= i => {
                    return fail(format!("joint {i} has parent {p}; parents must come first"))
                }
                _ => {}
            }
            if !joint.offset.iter().all(|v| v.is_finite()) {
                return fail(format!("joint {i} has a non-finite offset"));
            }
        }
        if head_chain.first() != Some(&0) {
            return fail("head chain must start at the root".into());
        }
        for pair in head_chain.windows(2) {
            if pair[1] >= NUM_JOINTS || joints[pair[1]].parent != Some(pair[0]) {
                return fail(format!(
                    "head chain breaks between joints {} and {}",
                    pair[0], pair[1]
                ));
            }
        }
        for part in FootPart::ALL {
            let markers = &foot_markers[part.index()];
            if markers.is_empty() {
                return fail(format!("foot part {} has no markers", part.name()));
            }
            for m in markers {
                if m.joint >= NUM_JOINTS || !m.offset.iter().all(|v| v.is_finite()) {
                    return fail(format!("invalid marker in foot part {}", part.name()));
                }
            }
        }
        if !(scale.is_finite() && scale > 0.0) {
            return fail(format!("scale must be positive, got {scale}"));
        }
        if !camera_offset.iter().all(|v| v.is_finite()) {
            return fail("camera offset must be finite".into());
        }
        Ok(Skeleton {
            joints,
            head_chain,
            foot_markers,
            scale,
            camera_offset,
        })
    }

    /// The bundled SMPL-topology skeleton with average adult proportions.
    pub fn smpl_default() -> Self {
        Self::from_json_str(include_str!("../data/default_skeleton.json"))
            .expect("bundled skeleton is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: SkeletonDoc =
            serde_json::from_str(text).map_err(|e| Error::json("skeleton", e))?;
        doc.into_skeleton()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SkeletonDoc::from_skeleton(self))
            .expect("skeleton serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn head_chain(&self) -> &[usize] {
        &self.head_chain
    }

    pub fn head_joint(&self) -> usize {
        *self.head_chain.last().expect("validated non-empty")
    }

    pub fn markers(&self, part: FootPart) -> &[FootMarker] {
        &self.foot_markers[part.index()]
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidSkeleton(format!("scale must be positive, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    /// Camera centre offset from the head joint, in the head frame.
    pub fn camera_offset(&self) -> Vec3 {
        self.camera_offset
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.joints[joint].parent
    }

    /// Whether `ancestor` lies on the path from the root to `joint` (inclusive).
    pub fn is_ancestor_or_self(&self, ancestor: usize, joint: usize) -> bool {
        let mut cur = Some(joint);
        while let Some(j) = cur {
            if j == ancestor {
                return true;
            }
            cur = self.joints[j].parent;
        }
        false
    }

    pub fn kinematics(&self, theta: &Theta, trans: &Vec3) -> Kinematics {
        let mut local = [Mat3::identity(); NUM_JOINTS];
        for (l, t) in local.iter_mut().zip(theta) {
            *l = exp_matrix(t);
        }
        self.kinematics_from_local(&local, trans)
    }

    fn kinematics_from_local(&self, local: &[Mat3; NUM_JOINTS], trans: &Vec3) -> Kinematics {
        let mut world = [Mat3::identity(); NUM_JOINTS];
        let mut positions = [Vec3::zeros(); NUM_JOINTS];
        world[0] = local[0];
        positions[0] = trans + self.joints[0].offset * self.scale;
        for i in 1..NUM_JOINTS {
            let p = self.joints[i].parent.expect("validated");
            positions[i] = positions[p] + world[p] * (self.joints[i].offset * self.scale);
            world[i] = world[p] * local[i];
        }
        Kinematics { world, positions }
    }
}

/// Cached forward kinematics of one pose.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub world: [Mat3; NUM_JOINTS],
    pub positions: [Vec3; NUM_JOINTS],
}

impl Kinematics {
    pub fn marker(&self, sk: &Skeleton, marker: &FootMarker) -> Vec3 {
        self.positions[marker.joint] + self.world[marker.joint] * (marker.offset * sk.scale)
    }

    pub fn camera_position(&self, sk: &Skeleton) -> Vec3 {
        let h = sk.head_joint();
        self.positions[h] + self.world[h] * (sk.camera_offset * sk.scale)
    }

    /// Per-joint world-frame sensitivity `W_i J_r(θ_i)`: a change `δ` of the
    /// axis-angle of joint `i` rotates its subtree by `exp(W_i J_r(θ_i) δ)`
    /// about the joint position.
    pub fn sensitivities(&self, theta: &Theta) -> [Mat3; NUM_JOINTS] {
        let mut out = [Mat3::zeros(); NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            out[i] = self.world[i] * right_jacobian(&theta[i]);
        }
        out
    }

    /// Back-propagates world-space loads to pose gradients.
    ///
    /// `loads[j]` collects gradients with respect to points rigidly attached
    /// to joint `j` and with respect to left world-frame perturbations of the
    /// rotation of joint `j`. Consumes `loads` (subtree sums are formed in
    /// place). Returns the gradient with respect to θ and the translation.
    pub fn pullback(
        &self,
        sk: &Skeleton,
        sensitivities: &[Mat3; NUM_JOINTS],
        loads: &mut [JointLoad; NUM_JOINTS],
    ) -> (Theta, Vec3) {
        for i in (1..NUM_JOINTS).rev() {
            let p = sk.joints[i].parent.expect("validated");
            let child = loads[i];
            loads[p].force += child.force;
            loads[p].moment += child.moment;
        }
        let mut grad = zero_theta();
        for i in 0..NUM_JOINTS {
            let l = &loads[i];
            let torque = l.moment - self.positions[i].cross(&l.force);
            grad[i] = sensitivities[i].transpose() * torque;
        }
        (grad, loads[0].force)
    }
}

/// Gradient load attached to a joint; see [`Kinematics::pullback`].
#[derive(Clone, Copy, Debug, Default)]
pub struct JointLoad {
    pub force: Vec3,
    pub moment: Vec3,
}

impl JointLoad {
    /// Adds the gradient `g` of an energy with respect to a world point `p`
    /// attached to this joint.
    #[inline]
    pub fn add_point(&mut self, p: &Vec3, g: &Vec3) {
        self.force += g;
        self.moment += p.cross(g);
    }

    /// Adds the gradient of an energy with respect to a left world-frame
    /// perturbation `exp(ω) W` of this joint's rotation.
    #[inline]
    pub fn add_rotation(&mut self, g: &Vec3) {
        self.moment += g;
    }
}

pub fn forward_kinematics(sk: &Skeleton, pose: &BodyPose) -> JointTransforms {
    let kin = sk.kinematics(&pose.theta, &pose.trans);
    JointTransforms {
        rotations: kin
            .world
            .iter()
            .map(|m| Rotation::from_matrix_unchecked(*m))
            .collect(),
        positions: kin.positions.to_vec(),
    }
}

/// Product of the joint rotations along the head chain.
pub fn head_orientation(sk: &Skeleton, theta: &Theta) -> Rotation {
    Rotation::from_matrix_unchecked(head_matrix(sk, theta))
}

pub(crate) fn head_matrix(sk: &Skeleton, theta: &Theta) -> Mat3 {
    sk.head_chain
        .iter()
        .fold(Mat3::identity(), |acc, &i| acc * exp_matrix(&theta[i]))
}

/// Constant head-to-camera rotation calibrated on one frame: `R_H(θ₀)ᵀ R_C₀`.
pub fn head_camera_offset(sk: &Skeleton, theta0: &Theta, camera0: &Rotation) -> Rotation {
    Rotation::from_matrix_unchecked(head_matrix(sk, theta0).transpose() * camera0.matrix())
}

/// Camera orientation predicted from a pose: `R_H(θ) R_HC`.
pub fn camera_from_pose(sk: &Skeleton, theta: &Theta, head_to_camera: &Rotation) -> Rotation {
    Rotation::from_matrix_unchecked(head_matrix(sk, theta) * head_to_camera.matrix())
}

/// Camera centre predicted from a pose.
pub fn camera_position(sk: &Skeleton, pose: &BodyPose) -> Vec3 {
    sk.kinematics(&pose.theta, &pose.trans).camera_position(sk)
}

pub fn foot_points(sk: &Skeleton, pose: &BodyPose, part: FootPart) -> Vec<Vec3> {
    let kin = sk.kinematics(&pose.theta, &pose.trans);
    sk.markers(part).iter().map(|m| kin.marker(sk, m)).collect()
}

/// Jacobian of every marker of `part` with respect to the 75 pose variables
/// (θ then translation).
pub fn foot_points_jacobian(
    sk: &Skeleton,
    pose: &BodyPose,
    part: FootPart,
) -> Vec<SMatrix<f64, 3, POSE_DOF>> {
    let kin = sk.kinematics(&pose.theta, &pose.trans);
    let sens = kin.sensitivities(&pose.theta);
    sk.markers(part)
        .iter()
        .map(|m| {
            let point = kin.marker(sk, m);
            let mut jac = SMatrix::<f64, 3, POSE_DOF>::zeros();
            let mut cur = Some(m.joint);
            while let Some(i) = cur {
                // d point = (A_i δ) × (point - p_i)
                let block = -crate::rotmath::hat(&(point - kin.positions[i])) * sens[i];
                jac.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&block);
                cur = sk.joints[i].parent;
            }
            jac.fixed_view_mut::<3, 3>(0, 72).copy_from(&Mat3::identity());
            jac
        })
        .collect()
}

/// Jacobian of the predicted camera orientation with respect to the 75 pose
/// variables, as a left world-frame rotation vector:
/// `R(θ + δ) ≈ exp(J δ) R(θ)`. The translation columns are zero. Independent
/// of the head-to-camera rotation, which multiplies on the right.
pub fn camera_rotation_jacobian(sk: &Skeleton, theta: &Theta) -> SMatrix<f64, 3, POSE_DOF> {
    let kin = sk.kinematics(theta, &Vec3::zeros());
    let sens = kin.sensitivities(theta);
    let mut jac = SMatrix::<f64, 3, POSE_DOF>::zeros();
    for &i in &sk.head_chain {
        jac.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&sens[i]);
    }
    jac
}

#[derive(Serialize, Deserialize)]
struct SkeletonDoc {
    version: u32,
    joints: Vec<JointDoc>,
    head_chain: Vec<usize>,
    foot_markers: FootMarkersDoc,
    #[serde(default = "one")]
    scale: f64,
    #[serde(default)]
    camera_offset: [f64; 3],
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct JointDoc {
    name: String,
    parent: Option<usize>,
    offset: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct MarkerDoc {
    joint: usize,
    offset: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct FootMarkersDoc {
    left_toe: Vec<MarkerDoc>,
    left_heel: Vec<MarkerDoc>,
    right_toe: Vec<MarkerDoc>,
    right_heel: Vec<MarkerDoc>,
}

const SKELETON_VERSION: u32 = 1;

impl SkeletonDoc {
    fn into_skeleton(self) -> Result<Skeleton> {
        if self.version != SKELETON_VERSION {
            return Err(Error::InvalidSkeleton(format!(
                "unsupported skeleton file version {}",
                self.version
            )));
        }
        let markers = |list: Vec<MarkerDoc>| -> Vec<FootMarker> {
            list.into_iter()
                .map(|m| FootMarker {
                    joint: m.joint,
                    offset: Vec3::from(m.offset),
                })
                .collect()
        };
        let fm = self.foot_markers;
        Skeleton::new(
            self.joints
                .into_iter()
                .map(|j| Joint {
                    name: j.name,
                    parent: j.parent,
                    offset: Vec3::from(j.offset),
                })
                .collect(),
            self.head_chain,
            [
                markers(fm.left_toe),
                markers(fm.left_heel),
                markers(fm.right_toe),
                markers(fm.right_heel),
            ],
            self.scale,
            Vec3::from(self.camera_offset),
        )
    }

    fn from_skeleton(sk: &Skeleton) -> Self {
        let markers = |part: FootPart| -> Vec<MarkerDoc> {
            sk.markers(part)
                .iter()
                .map(|m| MarkerDoc {
                    joint: m.joint,
                    offset: m.offset.into(),
                })
                .collect()
        };
        SkeletonDoc {
            version: SKELETON_VERSION,
            joints: sk
                .joints
                .iter()
                .map(|j| JointDoc {
                    name: j.name.clone(),
                    parent: j.parent,
                    offset: j.offset.into(),
                })
                .collect(),
            head_chain: sk.head_chain.clone(),
            foot_markers: FootMarkersDoc {
                left_toe: markers(FootPart::LeftToe),
                left_heel: markers(FootPart::LeftHeel),
                right_toe: markers(FootPart::RightToe),
                right_heel: markers(FootPart::RightHeel),
            },
            scale: sk.scale,
            camera_offset: sk.camera_offset.into(),
        }
    }
}
