//! Unit-inertia, gravity-free joint plant shared by the virtual leader and
//! the simulated follower.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::model::RobotModel;

/// Per-joint proportional and derivative gains, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    kp: Vec<f64>,
    kd: Vec<f64>,
}

pub type LeaderGains = Gains;
pub type FollowerGains = Gains;

#[derive(Debug, Clone, PartialEq)]
pub enum GainsError {
    LengthMismatch { kp: usize, kd: usize },
    Empty,
    NonPositive { joint: usize },
}

impl fmt::Display for GainsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainsError::LengthMismatch { kp, kd } => {
                write!(f, "{kp} proportional gains but {kd} derivative gains")
            }
            GainsError::Empty => write!(f, "no gains given"),
            GainsError::NonPositive { joint } => write!(f, "gain on joint {joint} must be > 0"),
        }
    }
}

impl core::error::Error for GainsError {}

impl Gains {
    pub fn new(kp: Vec<f64>, kd: Vec<f64>) -> Result<Self, GainsError> {
        if kp.len() != kd.len() {
            return Err(GainsError::LengthMismatch {
                kp: kp.len(),
                kd: kd.len(),
            });
        }
        if kp.is_empty() {
            return Err(GainsError::Empty);
        }
        if let Some(joint) = kp
            .iter()
            .zip(&kd)
            .position(|(p, d)| !(*p > 0.0 && *d > 0.0 && p.is_finite() && d.is_finite()))
        {
            return Err(GainsError::NonPositive { joint });
        }
        Ok(Gains { kp, kd })
    }

    pub fn uniform(n: usize, kp: f64, kd: f64) -> Result<Self, GainsError> {
        Gains::new(vec![kp; n], vec![kd; n])
    }

    /// Leader-side default: k_p = 600, k_d = 50 on every joint.
    pub fn leader_default(n: usize) -> Self {
        Gains::uniform(n.max(1), 600.0, 50.0).expect("positive constants")
    }

    /// Follower-side default for the 7-joint arm.
    pub fn follower_default() -> Self {
        Gains::new(
            vec![600.0, 600.0, 600.0, 250.0, 150.0, 50.0, 1.0],
            vec![50.0, 50.0, 20.0, 20.0, 20.0, 10.0, 1.0],
        )
        .expect("positive constants")
    }

    pub fn kp(&self) -> &[f64] {
        &self.kp
    }

    pub fn kd(&self) -> &[f64] {
        &self.kd
    }

    pub fn len(&self) -> usize {
        self.kp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kp.is_empty()
    }
}

/// PD torque with damping on the measured velocity: `kp·(target − q) − kd·q̇`.
#[inline]
pub fn pd_torque(target: f64, q: f64, q_dot: f64, kp: f64, kd: f64) -> f64 {
    kp * (target - q) - kd * q_dot
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantFault {
    pub joint: usize,
    pub value: f64,
}

impl fmt::Display for PlantFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "non-finite state on joint {} ({})", self.joint, self.value)
    }
}

impl core::error::Error for PlantFault {}

/// One semi-implicit Euler step (`q̇ += τ·dt`, then `q += q̇·dt`) with
/// position clamping at the joint limits; velocity is zeroed at a stop.
///
/// Nothing is written if any torque or resulting state is non-finite.
pub fn integrate(
    model: &RobotModel,
    q: &mut [f64],
    q_dot: &mut [f64],
    tau: &[f64],
    dt: f64,
) -> Result<(), PlantFault> {
    debug_assert!(q.len() == model.dof() && q_dot.len() == q.len() && tau.len() == q.len());
    for (i, ((&t, &qi), &vi)) in tau.iter().zip(q.iter()).zip(q_dot.iter()).enumerate() {
        let v = vi + t * dt;
        let p = qi + v * dt;
        if !(t.is_finite() && v.is_finite() && p.is_finite()) {
            let value = if t.is_finite() { v } else { t };
            return Err(PlantFault { joint: i, value });
        }
    }
    for (((qi, vi), &t), joint) in q
        .iter_mut()
        .zip(q_dot.iter_mut())
        .zip(tau)
        .zip(model.joints())
    {
        *vi += t * dt;
        *qi += *vi * dt;
        if *qi < joint.lower {
            *qi = joint.lower;
            *vi = 0.0;
        } else if *qi > joint.upper {
            *qi = joint.upper;
            *vi = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gains_validation() {
        assert!(Gains::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert_eq!(
            Gains::new(vec![1.0, 0.0], vec![1.0, 1.0]),
            Err(GainsError::NonPositive { joint: 1 })
        );
        assert_eq!(Gains::new(vec![], vec![]), Err(GainsError::Empty));
    }

    #[test]
    fn clamps_at_limit_and_zeroes_velocity() {
        let m = RobotModel::planar(&[1.0]).unwrap();
        let mut q = [3.14];
        let mut v = [1.0];
        integrate(&m, &mut q, &mut v, &[100.0], 0.01).unwrap();
        assert_eq!(q[0], core::f64::consts::PI);
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn non_finite_torque_leaves_state_untouched() {
        let m = RobotModel::planar(&[1.0, 1.0]).unwrap();
        let mut q = [0.1, 0.2];
        let mut v = [0.0, 0.0];
        let err = integrate(&m, &mut q, &mut v, &[1.0, f64::INFINITY], 1e-3).unwrap_err();
        assert_eq!(err.joint, 1);
        assert_eq!(q, [0.1, 0.2]);
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn torque_sign_opposes_velocity() {
        assert_eq!(pd_torque(0.0, 0.0, 2.0, 600.0, 50.0), -100.0);
        assert_eq!(pd_torque(0.1, 0.0, 0.0, 600.0, 50.0), 600.0 * 0.1);
    }
}
