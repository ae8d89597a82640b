//! Forward kinematics, geometric Jacobian and iterative pseudo-inverse IK.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Isometry3, MatrixXx6, Matrix6xX, UnitQuaternion, Vector3, Vector6};

use crate::model::{JointConfig, Pose, RobotModel};

/// Step size below which an unconverged IK iteration counts as stalled.
pub const STALL_STEP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum KinematicsError {
    LengthMismatch { expected: usize, got: usize },
    NonFinite,
    InvalidDamping(f64),
}

impl fmt::Display for KinematicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KinematicsError::LengthMismatch { expected, got } => {
                write!(f, "joint vector has {got} entries, model has {expected}")
            }
            KinematicsError::NonFinite => write!(f, "non-finite input"),
            KinematicsError::InvalidDamping(s) => write!(f, "sigma_min must be >= 0, got {s}"),
        }
    }
}

impl core::error::Error for KinematicsError {}

fn check_len(model: &RobotModel, q: &[f64]) -> Result<(), KinematicsError> {
    if q.len() != model.dof() {
        return Err(KinematicsError::LengthMismatch {
            expected: model.dof(),
            got: q.len(),
        });
    }
    Ok(())
}

/// Frame of each joint before its rotation is applied, plus the
/// end-effector frame. Caller guarantees `q.len() == model.dof()`.
fn chain(model: &RobotModel, q: &[f64]) -> (Vec<Isometry3<f64>>, Isometry3<f64>) {
    let mut frames = Vec::with_capacity(model.dof());
    let mut acc = Isometry3::identity();
    for (joint, &angle) in model.joints().iter().zip(q) {
        acc *= joint.origin;
        frames.push(acc);
        acc *= UnitQuaternion::from_axis_angle(&joint.axis, angle);
    }
    let ee = acc * model.ee_offset();
    (frames, ee)
}

pub(crate) fn fk_unchecked(model: &RobotModel, q: &[f64]) -> Pose {
    Pose::from_isometry(&chain(model, q).1)
}

pub fn forward_kinematics(model: &RobotModel, q: &[f64]) -> Result<Pose, KinematicsError> {
    check_len(model, q)?;
    Ok(fk_unchecked(model, q))
}

/// Poses of every link frame (after each joint's rotation) followed by the
/// end-effector: `dof + 1` entries, the last equal to [`forward_kinematics`].
pub fn link_poses(model: &RobotModel, q: &[f64]) -> Result<Vec<Pose>, KinematicsError> {
    check_len(model, q)?;
    let mut out = Vec::with_capacity(model.dof() + 1);
    let mut acc = Isometry3::identity();
    for (joint, &angle) in model.joints().iter().zip(q) {
        acc = acc * joint.origin * UnitQuaternion::from_axis_angle(&joint.axis, angle);
        out.push(Pose::from_isometry(&acc));
    }
    out.push(Pose::from_isometry(&(acc * model.ee_offset())));
    Ok(out)
}

/// Geometric Jacobian in the base frame: column i is `(a_i × (p_ee − p_i), a_i)`.
pub fn jacobian(model: &RobotModel, q: &[f64]) -> Result<Matrix6xX<f64>, KinematicsError> {
    check_len(model, q)?;
    Ok(jacobian_unchecked(model, q))
}

fn jacobian_unchecked(model: &RobotModel, q: &[f64]) -> Matrix6xX<f64> {
    let (frames, ee) = chain(model, q);
    let p_ee = ee.translation.vector;
    let mut jac = Matrix6xX::zeros(model.dof());
    for (i, (frame, joint)) in frames.iter().zip(model.joints()).enumerate() {
        let axis: Vector3<f64> = frame.rotation * joint.axis.into_inner();
        let lin = axis.cross(&(p_ee - frame.translation.vector));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
    }
    jac
}

/// SVD pseudo-inverse with singular values below `sigma_min` dropped.
///
/// Singular values at the floating-point noise floor are always dropped, so
/// `sigma_min = 0` still yields a finite result for rank-deficient inputs.
pub fn damped_pseudo_inverse(
    jac: &Matrix6xX<f64>,
    sigma_min: f64,
) -> Result<MatrixXx6<f64>, KinematicsError> {
    if !(sigma_min >= 0.0 && sigma_min.is_finite()) {
        return Err(KinematicsError::InvalidDamping(sigma_min));
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(KinematicsError::NonFinite);
    }
    let n = jac.ncols();
    let svd = jac.clone().svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        return Err(KinematicsError::NonFinite);
    };
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let floor = f64::EPSILON * (n.max(6) as f64) * max_sv;
    let mut pinv = MatrixXx6::zeros(n);
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv < sigma_min || sv <= floor {
            continue;
        }
        // V_k * (1/s_k) * U_kᵀ
        let v_col = v_t.row(k).transpose();
        let u_col = u.column(k);
        pinv += (v_col / sv) * u_col.transpose();
    }
    Ok(pinv)
}

/// Rotation vector (axis · angle) of a unit quaternion, angle in [0, π].
pub fn quaternion_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let c = q.quaternion();
    let (mut w, mut v) = (c.w, c.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-12 {
        // first-order: angle ≈ 2s, axis = v/s
        return v * 2.0;
    }
    let angle = 2.0 * libm::atan2(s, w);
    v * (angle / s)
}

/// Six-dimensional task error: position difference, then the rotation vector
/// of `target.orientation · current.orientation⁻¹`.
pub fn pose_error(target: &Pose, current: &Pose) -> Vector6<f64> {
    let dp = target.position - current.position;
    let rot = quaternion_log(&(target.orientation * current.orientation.inverse()));
    Vector6::new(dp.x, dp.y, dp.z, rot.x, rot.y, rot.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkParams {
    /// m
    pub eps_pos: f64,
    /// rad
    pub eps_rot: f64,
    pub max_iter: usize,
    pub sigma_min: f64,
    /// Largest change of any joint in one iteration, rad.
    pub dq_clamp: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            eps_pos: 1e-3,
            eps_rot: 1e-2,
            max_iter: 100,
            sigma_min: 1e-4,
            dq_clamp: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IkFailure {
    MaxIterations,
    SingularityStall,
    /// Assigned by the leader when a converged solution moves too fast.
    StepVelocityExceeded,
}

impl fmt::Display for IkFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IkFailure::MaxIterations => "max iterations reached",
            IkFailure::SingularityStall => "stalled near a singularity",
            IkFailure::StepVelocityExceeded => "step exceeds velocity limits",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    pub converged: bool,
    pub q_hat: JointConfig,
    pub iterations: usize,
    pub residual: Vector6<f64>,
    pub failure: Option<IkFailure>,
}

impl IkResult {
    pub fn position_residual(&self) -> f64 {
        self.residual.fixed_rows::<3>(0).norm()
    }

    pub fn orientation_residual(&self) -> f64 {
        self.residual.fixed_rows::<3>(3).norm()
    }
}

/// Iterative pseudo-inverse IK starting at `q_init`.
///
/// Each iteration evaluates FK, stops if both the position and orientation
/// residual norms are within tolerance, otherwise steps by `J⁺ e` scaled so
/// that no joint moves by more than `dq_clamp`.
pub fn solve_ik(
    model: &RobotModel,
    q_init: &[f64],
    target: &Pose,
    params: &IkParams,
) -> Result<IkResult, KinematicsError> {
    check_len(model, q_init)?;
    if !target.is_finite() || q_init.iter().any(|v| !v.is_finite()) {
        return Err(KinematicsError::NonFinite);
    }
    if !(params.sigma_min >= 0.0) {
        return Err(KinematicsError::InvalidDamping(params.sigma_min));
    }
    let mut q_hat = JointConfig::from(q_init);
    let mut iterations = 0;
    loop {
        let x_hat = fk_unchecked(model, &q_hat);
        let err = pose_error(target, &x_hat);
        let pos = err.fixed_rows::<3>(0).norm();
        let rot = err.fixed_rows::<3>(3).norm();
        let done = |failure: Option<IkFailure>, q_hat: JointConfig| IkResult {
            converged: failure.is_none(),
            q_hat,
            iterations,
            residual: err,
            failure,
        };
        if pos <= params.eps_pos && rot <= params.eps_rot {
            return Ok(done(None, q_hat));
        }
        if iterations >= params.max_iter {
            return Ok(done(Some(IkFailure::MaxIterations), q_hat));
        }
        let pinv = damped_pseudo_inverse(&jacobian_unchecked(model, &q_hat), params.sigma_min)?;
        let mut dq = pinv * err;
        let peak = dq.amax();
        if peak > params.dq_clamp {
            dq *= params.dq_clamp / peak;
        }
        if dq.norm() < STALL_STEP {
            return Ok(done(Some(IkFailure::SingularityStall), q_hat));
        }
        for (qi, d) in q_hat.iter_mut().zip(dq.iter()) {
            *qi += d;
        }
        iterations += 1;
    }
}
