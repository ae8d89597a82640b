//! Serial-chain robot description and the joint/pose value types shared by
//! the leader, the follower and the transport.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Deref, DerefMut};

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};

/// Tolerance on the unit norm of joint axes and orientation quaternions.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Ordered joint angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig(Vec<f64>);

impl JointConfig {
    pub fn new(values: Vec<f64>) -> Self {
        JointConfig(values)
    }

    pub fn zeros(n: usize) -> Self {
        JointConfig(alloc::vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Largest absolute per-joint difference to `other`.
    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0, |acc, (a, b)| f64::max(acc, libm::fabs(a - b)))
    }
}

impl Deref for JointConfig {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointConfig {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        JointConfig(v)
    }
}

impl From<&[f64]> for JointConfig {
    fn from(v: &[f64]) -> Self {
        JointConfig(v.to_vec())
    }
}

/// End-effector (or any frame) pose in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Pose {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Pose::new(iso.translation.vector, iso.rotation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    /// `self ∘ other`: `other` expressed in `self`'s frame, mapped to the parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.position + self.orientation * other.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    pub fn is_finite(&self) -> bool {
        let q = self.orientation.quaternion();
        self.position.iter().all(|v| v.is_finite()) && q.coords.iter().all(|v| v.is_finite())
    }
}

/// One revolute joint: fixed transform from the parent frame, then rotation
/// about `axis` by the joint angle.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDescriptor {
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub lower: f64,
    pub upper: f64,
    /// rad/s
    pub vel_limit: f64,
}

/// Unvalidated joint parameters as they come from a config file or builder.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub origin: Isometry3<f64>,
    pub axis: Vector3<f64>,
    pub limits: [f64; 2],
    pub vel_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    NoJoints,
    NonFinite { joint: Option<usize> },
    AxisNotUnit { joint: usize, norm: f64 },
    InvertedLimits { joint: usize, lower: f64, upper: f64 },
    NonPositiveVelocityLimit { joint: usize, vel_limit: f64 },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::NoJoints => write!(f, "model must have at least one joint"),
            ModelError::NonFinite { joint: Some(j) } => {
                write!(f, "joint {j} has a non-finite parameter")
            }
            ModelError::NonFinite { joint: None } => {
                write!(f, "end-effector offset has a non-finite parameter")
            }
            ModelError::AxisNotUnit { joint, norm } => {
                write!(f, "joint {joint} axis has norm {norm}, expected 1")
            }
            ModelError::InvertedLimits {
                joint,
                lower,
                upper,
            } => write!(
                f,
                "joint {joint} lower limit {lower} is not below upper limit {upper}"
            ),
            ModelError::NonPositiveVelocityLimit { joint, vel_limit } => {
                write!(f, "joint {joint} velocity limit {vel_limit} must be > 0")
            }
        }
    }
}

impl core::error::Error for ModelError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    joints: Vec<JointDescriptor>,
    ee_offset: Isometry3<f64>,
}

fn iso_finite(iso: &Isometry3<f64>) -> bool {
    iso.translation.vector.iter().all(|v| v.is_finite())
        && iso.rotation.quaternion().coords.iter().all(|v| v.is_finite())
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<JointSpec>,
        ee_offset: Isometry3<f64>,
    ) -> Result<Self, ModelError> {
        if joints.is_empty() {
            return Err(ModelError::NoJoints);
        }
        if !iso_finite(&ee_offset) {
            return Err(ModelError::NonFinite { joint: None });
        }
        let mut out = Vec::with_capacity(joints.len());
        for (i, j) in joints.into_iter().enumerate() {
            let finite = iso_finite(&j.origin)
                && j.axis.iter().all(|v| v.is_finite())
                && j.limits.iter().all(|v| v.is_finite())
                && j.vel_limit.is_finite();
            if !finite {
                return Err(ModelError::NonFinite { joint: Some(i) });
            }
            let norm = j.axis.norm();
            if libm::fabs(norm - 1.0) > UNIT_NORM_TOL {
                return Err(ModelError::AxisNotUnit { joint: i, norm });
            }
            let [lower, upper] = j.limits;
            if lower >= upper {
                return Err(ModelError::InvertedLimits {
                    joint: i,
                    lower,
                    upper,
                });
            }
            if j.vel_limit <= 0.0 {
                return Err(ModelError::NonPositiveVelocityLimit {
                    joint: i,
                    vel_limit: j.vel_limit,
                });
            }
            out.push(JointDescriptor {
                origin: j.origin,
                axis: Unit::new_unchecked(j.axis),
                lower,
                upper,
                vel_limit: j.vel_limit,
            });
        }
        Ok(RobotModel {
            name: name.into(),
            joints: out,
            ee_offset,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[JointDescriptor] {
        &self.joints
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn ee_offset(&self) -> &Isometry3<f64> {
        &self.ee_offset
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof()
            && self
                .joints
                .iter()
                .zip(q)
                .all(|(j, v)| *v >= j.lower && *v <= j.upper)
    }

    /// Planar chain of revolute z-joints with links along x.
    pub fn planar(link_lengths: &[f64]) -> Result<Self, ModelError> {
        let (last, rest) = link_lengths.split_last().ok_or(ModelError::NoJoints)?;
        let joints = core::iter::once(0.0)
            .chain(rest.iter().copied())
            .map(|offset| JointSpec {
                origin: Isometry3::translation(offset, 0.0, 0.0),
                axis: Vector3::z(),
                limits: [-core::f64::consts::PI, core::f64::consts::PI],
                vel_limit: 1.0,
            })
            .collect();
        RobotModel::new("planar", joints, Isometry3::translation(*last, 0.0, 0.0))
    }

    /// Franka-Panda-like 7-DOF arm with the hand TCP as end-effector.
    ///
    /// Link offsets follow the manufacturer's modified-DH table converted to
    /// per-joint fixed transforms; per-joint velocity limits are 1 rad/s.
    pub fn panda() -> Self {
        use core::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        // (translation, roll about x)
        let table: [([f64; 3], f64, [f64; 2]); 7] = [
            ([0.0, 0.0, 0.333], 0.0, [-2.8973, 2.8973]),
            ([0.0, 0.0, 0.0], -FRAC_PI_2, [-1.7628, 1.7628]),
            ([0.0, -0.316, 0.0], FRAC_PI_2, [-2.8973, 2.8973]),
            ([0.0825, 0.0, 0.0], FRAC_PI_2, [-3.0718, -0.0698]),
            ([-0.0825, 0.384, 0.0], -FRAC_PI_2, [-2.8973, 2.8973]),
            ([0.0, 0.0, 0.0], FRAC_PI_2, [-0.0175, 3.7525]),
            ([0.088, 0.0, 0.0], FRAC_PI_2, [-2.8973, 2.8973]),
        ];
        let joints = table
            .iter()
            .map(|&(t, roll, limits)| JointSpec {
                origin: Isometry3::from_parts(
                    Translation3::new(t[0], t[1], t[2]),
                    UnitQuaternion::from_euler_angles(roll, 0.0, 0.0),
                ),
                axis: Vector3::z(),
                limits,
                vel_limit: 1.0,
            })
            .collect();
        // flange (0.107) + hand TCP (0.1034), hand rotated -pi/4 about z
        let ee = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, 0.107 + 0.1034),
            UnitQuaternion::from_euler_angles(0.0, 0.0, -FRAC_PI_4),
        );
        RobotModel::new("panda", joints, ee).expect("built-in panda model is valid")
    }

    /// Default "ready" configuration of [`RobotModel::panda`].
    pub fn panda_home() -> JointConfig {
        use core::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        JointConfig::new(alloc::vec![
            0.0,
            -FRAC_PI_4,
            0.0,
            -3.0 * FRAC_PI_4,
            0.0,
            FRAC_PI_2,
            FRAC_PI_4
        ])
    }
}
