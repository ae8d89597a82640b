//! Numerical core of a simulated leader-follower teleoperation stack.
//!
//! Everything here is `no_std` (with `alloc`) and free of I/O: serial-chain
//! kinematics with iterative pseudo-inverse IK, the virtual leader arm and its
//! grasp state machine, the filtered PD follower, and the safety gate that
//! sits between them. Transport, file formats and the CLI live in the
//! `puppet` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod clock;
pub mod follower;
pub mod kinematics;
pub mod leader;
pub mod model;
pub mod plant;
pub mod safety;

/// Last-value mailbox: posting replaces whatever was waiting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mailbox<T>(Option<T>);

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Mailbox(None)
    }
}

impl<T> Mailbox<T> {
    pub fn post(&mut self, value: T) -> Option<T> {
        self.0.replace(value)
    }

    pub fn take(&mut self) -> Option<T> {
        self.0.take()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }
}

pub use follower::{FilterState, FollowerState};
pub use kinematics::{IkFailure, IkParams, IkResult};
pub use leader::{GraspPhase, Leader, LeaderState};
pub use model::{JointConfig, Pose, RobotModel};
pub use plant::{FollowerGains, Gains, LeaderGains};
pub use safety::{GateState, LockCause, Overlay, Verdict};
