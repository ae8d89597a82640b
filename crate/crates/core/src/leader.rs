//! The virtual leader arm: grasp interaction, rigid-link target derivation,
//! velocity gating and the PD-driven joint plant.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::kinematics::{fk_unchecked, solve_ik, IkFailure, IkParams, KinematicsError};
use crate::model::{JointConfig, Pose, RobotModel};
use crate::plant::{integrate, pd_torque, LeaderGains, PlantFault};

/// Grasp sphere radius around the end-effector, m.
pub const DEFAULT_SPHERE_RADIUS: f64 = 0.15;
/// Period of operator commands and leader publications, s.
pub const COMMAND_PERIOD: f64 = 0.02;
/// Leader plant integration step, s.
pub const LEADER_DT: f64 = 1e-3;

/// Fixed transform from the controller frame to the end-effector frame,
/// captured when a grasp engages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidLink(Pose);

impl RigidLink {
    pub fn capture(controller: &Pose, ee: &Pose) -> Self {
        RigidLink(controller.inverse().compose(ee))
    }

    pub fn controller_to_ee(&self) -> &Pose {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityViolation {
    EndEffector { speed: f64 },
    Joint { index: usize, speed: f64 },
}

impl fmt::Display for VelocityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VelocityViolation::EndEffector { speed } => {
                write!(f, "end-effector speed {speed:.3} m/s over limit")
            }
            VelocityViolation::Joint { index, speed } => {
                write!(f, "joint {index} speed {speed:.3} rad/s over limit")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultCause {
    Ik(IkFailure),
    VelocityLimit(VelocityViolation),
    NonFinite(PlantFault),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspColor {
    White,
    Blue,
    Green,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraspPhase {
    Idle,
    Hover,
    Engaged(RigidLink),
    Faulted(FaultCause),
}

impl GraspPhase {
    pub fn color(&self) -> GraspColor {
        match self {
            GraspPhase::Idle => GraspColor::White,
            GraspPhase::Hover => GraspColor::Blue,
            GraspPhase::Engaged(_) => GraspColor::Green,
            GraspPhase::Faulted(_) => GraspColor::Red,
        }
    }

    pub fn is_engaged(&self) -> bool {
        matches!(self, GraspPhase::Engaged(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderState {
    pub q: JointConfig,
    pub q_dot: Vec<f64>,
    pub grasp: GraspPhase,
    pub sim_time: f64,
}

impl LeaderState {
    pub fn at_rest(q: JointConfig) -> Self {
        let n = q.len();
        LeaderState {
            q,
            q_dot: vec![0.0; n],
            grasp: GraspPhase::Idle,
            sim_time: 0.0,
        }
    }

    /// Advances the grasp state machine for one controller sample.
    ///
    /// Idle becomes Hover when the controller is inside the sphere, Hover
    /// engages on press, releasing an engaged grasp returns to Hover/Idle and
    /// a fault is cleared only by a release. Transitions chain within a call,
    /// so a pressed controller already inside the sphere engages immediately.
    pub fn grasp_update(
        &mut self,
        controller: &Pose,
        pressed: bool,
        model: &RobotModel,
        sphere_radius: f64,
    ) {
        let ee = fk_unchecked(model, &self.q);
        let inside = (controller.position - ee.position).norm() <= sphere_radius;
        if let GraspPhase::Faulted(_) | GraspPhase::Engaged(_) = self.grasp {
            if pressed {
                return;
            }
        }
        self.grasp = if !inside {
            GraspPhase::Idle
        } else if pressed {
            GraspPhase::Engaged(RigidLink::capture(controller, &ee))
        } else {
            GraspPhase::Hover
        };
    }

    /// One PD + plant step toward `q_target`. A non-finite torque leaves the
    /// joints untouched and moves the grasp to `Faulted`.
    pub fn pd_step(&mut self, q_target: &[f64], gains: &LeaderGains, model: &RobotModel, dt: f64) {
        debug_assert!(dt > 0.0 && dt <= COMMAND_PERIOD);
        let tau: Vec<f64> = (0..self.q.len())
            .map(|i| {
                pd_torque(
                    q_target[i],
                    self.q[i],
                    self.q_dot[i],
                    gains.kp()[i],
                    gains.kd()[i],
                )
            })
            .collect();
        if let Err(fault) = integrate(model, &mut self.q, &mut self.q_dot, &tau, dt) {
            self.grasp = GraspPhase::Faulted(FaultCause::NonFinite(fault));
        }
        self.sim_time += dt;
    }
}

/// Target end-effector pose for a controller pose under a captured link.
pub fn target_from_controller(link: &RigidLink, controller: &Pose) -> Pose {
    controller.compose(link.controller_to_ee())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityLimits {
    /// m/s
    pub ee_speed: f64,
    /// rad/s, one per joint
    pub joint_speed: Vec<f64>,
}

impl VelocityLimits {
    /// 2 m/s at the end-effector plus each joint's own limit from the model.
    pub fn for_model(model: &RobotModel) -> Self {
        VelocityLimits {
            ee_speed: 2.0,
            joint_speed: model.joints().iter().map(|j| j.vel_limit).collect(),
        }
    }

    pub fn uniform(ee_speed: f64, joint_speed: f64, dof: usize) -> Self {
        VelocityLimits {
            ee_speed,
            joint_speed: vec![joint_speed; dof],
        }
    }
}

/// Checks the implied end-effector and joint speeds of a commanded step.
pub fn velocity_gate(
    q_prev: &[f64],
    q_new: &[f64],
    ee_prev: &Pose,
    ee_new: &Pose,
    dt: f64,
    limits: &VelocityLimits,
) -> Result<(), VelocityViolation> {
    debug_assert!(dt > 0.0);
    let speed = (ee_new.position - ee_prev.position).norm() / dt;
    if speed > limits.ee_speed {
        return Err(VelocityViolation::EndEffector { speed });
    }
    for (index, ((a, b), lim)) in q_prev
        .iter()
        .zip(q_new)
        .zip(&limits.joint_speed)
        .enumerate()
    {
        let speed = libm::fabs(b - a) / dt;
        if speed > *lim {
            return Err(VelocityViolation::Joint { index, speed });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderConfig {
    pub gains: LeaderGains,
    pub ik: IkParams,
    pub limits: VelocityLimits,
    pub sphere_radius: f64,
    pub command_period: f64,
    pub dt: f64,
}

impl LeaderConfig {
    pub fn for_model(model: &RobotModel) -> Self {
        LeaderConfig {
            gains: LeaderGains::leader_default(model.dof()),
            ik: IkParams::default(),
            limits: VelocityLimits::for_model(model),
            sphere_radius: DEFAULT_SPHERE_RADIUS,
            command_period: COMMAND_PERIOD,
            dt: LEADER_DT,
        }
    }
}

/// Result of feeding one operator sample to the leader.
#[derive(Debug, Clone, PartialEq)]
pub enum CommandOutcome {
    /// Not engaged; the arm holds where it is.
    Holding,
    /// IK converged within velocity limits; the joint target was updated.
    Accepted { iterations: usize },
    /// IK failed or the step was too fast; the target was left unchanged and
    /// the grasp is now faulted.
    Rejected(FaultCause),
    /// Already faulted; waiting for release.
    Faulted,
}

/// Stepped owner of the virtual leader: turns controller samples into joint
/// targets and integrates the arm toward them.
#[derive(Debug, Clone, PartialEq)]
pub struct Leader {
    pub config: LeaderConfig,
    state: LeaderState,
    target: JointConfig,
}

impl Leader {
    pub fn new(model: &RobotModel, q: JointConfig, config: LeaderConfig) -> Result<Self, KinematicsError> {
        if q.len() != model.dof() || config.gains.len() != model.dof() {
            return Err(KinematicsError::LengthMismatch {
                expected: model.dof(),
                got: if q.len() != model.dof() { q.len() } else { config.gains.len() },
            });
        }
        Ok(Leader {
            config,
            target: q.clone(),
            state: LeaderState::at_rest(q),
        })
    }

    pub fn state(&self) -> &LeaderState {
        &self.state
    }

    pub fn target(&self) -> &JointConfig {
        &self.target
    }

    /// Replaces the whole state (used by realignment and fault injection).
    pub fn set_state(&mut self, state: LeaderState) {
        if !state.grasp.is_engaged() {
            self.target = state.q.clone();
        }
        self.state = state;
    }

    /// Processes one controller sample at the command rate.
    pub fn command(&mut self, model: &RobotModel, controller: &Pose, pressed: bool) -> CommandOutcome {
        self.state
            .grasp_update(controller, pressed, model, self.config.sphere_radius);
        let link = match self.state.grasp {
            GraspPhase::Engaged(link) => link,
            GraspPhase::Faulted(_) => return CommandOutcome::Faulted,
            _ => return CommandOutcome::Holding,
        };
        let target_pose = target_from_controller(&link, controller);
        let verdict = solve_ik(model, &self.target, &target_pose, &self.config.ik)
            .map_err(|_| FaultCause::Ik(IkFailure::MaxIterations))
            .and_then(|ik| match ik.failure {
                Some(f) => Err(FaultCause::Ik(f)),
                None => Ok(ik),
            })
            .and_then(|ik| {
                velocity_gate(
                    &self.target,
                    &ik.q_hat,
                    &fk_unchecked(model, &self.target),
                    &fk_unchecked(model, &ik.q_hat),
                    self.config.command_period,
                    &self.config.limits,
                )
                .map(|()| ik)
                .map_err(FaultCause::VelocityLimit)
            });
        match verdict {
            Ok(ik) => {
                self.target = ik.q_hat;
                CommandOutcome::Accepted {
                    iterations: ik.iterations,
                }
            }
            Err(cause) => {
                self.state.grasp = GraspPhase::Faulted(cause);
                CommandOutcome::Rejected(cause)
            }
        }
    }

    /// Advances the plant by one integration step. While not engaged the
    /// target tracks the current position so the arm holds still.
    pub fn step(&mut self, model: &RobotModel) {
        if !self.state.grasp.is_engaged() {
            self.target.clone_from(&self.state.q);
        }
        self.state
            .pd_step(&self.target, &self.config.gains, model, self.config.dt);
    }
}
