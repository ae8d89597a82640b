//! Follower-side servo: zero-order hold over the incoming target stream, the
//! first-order low-pass filter, the joint PD law and the simulated arm.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::model::{JointConfig, RobotModel};
use crate::plant::{integrate, pd_torque, FollowerGains, PlantFault};

/// Control loop period, s.
pub const FOLLOWER_DT: f64 = 1e-3;
/// Default smoothing factor of the target filter.
pub const DEFAULT_ALPHA: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterError(pub f64);

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "smoothing factor {} outside (0, 1]", self.0)
    }
}

impl core::error::Error for FilterError {}

/// `q̃ ← (1 − α)·q̃ + α·q_target`, applied per joint once per control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    q_tilde: JointConfig,
    alpha: f64,
}

impl FilterState {
    pub fn new(initial: JointConfig, alpha: f64) -> Result<Self, FilterError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FilterError(alpha));
        }
        Ok(FilterState {
            q_tilde: initial,
            alpha,
        })
    }

    pub fn q_tilde(&self) -> &JointConfig {
        &self.q_tilde
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn step(&mut self, q_target: &[f64]) {
        debug_assert_eq!(q_target.len(), self.q_tilde.len());
        let a = self.alpha;
        for (f, t) in self.q_tilde.iter_mut().zip(q_target) {
            *f = (1.0 - a) * *f + a * t;
        }
    }
}

/// Joint torques `K_p·(q̃ − q) − K_d·q̇`.
pub fn follower_pd(q_tilde: &[f64], q: &[f64], q_dot: &[f64], gains: &FollowerGains) -> Vec<f64> {
    (0..q.len())
        .map(|i| pd_torque(q_tilde[i], q[i], q_dot[i], gains.kp()[i], gains.kd()[i]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Accepted,
    Stale { last_seq: u64 },
    WrongLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerState {
    pub q: JointConfig,
    pub q_dot: Vec<f64>,
    latest_target: JointConfig,
    filter: FilterState,
    pub sim_time: f64,
    last_seq: Option<u64>,
    dropped: u64,
}

impl FollowerState {
    /// At rest at `q`, with the held target and the filter initialised to `q`.
    pub fn at_rest(q: JointConfig, alpha: f64) -> Result<Self, FilterError> {
        let n = q.len();
        Ok(FollowerState {
            latest_target: q.clone(),
            filter: FilterState::new(q.clone(), alpha)?,
            q,
            q_dot: vec![0.0; n],
            sim_time: 0.0,
            last_seq: None,
            dropped: 0,
        })
    }

    pub fn latest_target(&self) -> &JointConfig {
        &self.latest_target
    }

    pub fn filter(&self) -> &FilterState {
        &self.filter
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    /// Messages dropped for sequence regression or wrong length.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Replaces the held target if `seq` is newer than anything seen so far.
    pub fn ingest_target(&mut self, seq: u64, q: &[f64]) -> Ingest {
        if q.len() != self.q.len() {
            self.dropped += 1;
            return Ingest::WrongLength {
                expected: self.q.len(),
                got: q.len(),
            };
        }
        if let Some(last_seq) = self.last_seq {
            if seq <= last_seq {
                self.dropped += 1;
                return Ingest::Stale { last_seq };
            }
        }
        self.last_seq = Some(seq);
        self.latest_target = JointConfig::from(q);
        Ingest::Accepted
    }

    /// One control tick: filter against the held target, PD, integrate.
    pub fn tick(
        &mut self,
        gains: &FollowerGains,
        model: &RobotModel,
        dt: f64,
    ) -> Result<(), PlantFault> {
        self.filter.step(&self.latest_target);
        let tau = follower_pd(&self.filter.q_tilde, &self.q, &self.q_dot, gains);
        let res = integrate(model, &mut self.q, &mut self.q_dot, &tau, dt);
        self.sim_time += dt;
        res
    }

    /// A tick with the arm mechanically held: the filter still runs, the
    /// joints do not move.
    pub fn hold_tick(&mut self, dt: f64) {
        self.filter.step(&self.latest_target);
        self.q_dot.iter_mut().for_each(|v| *v = 0.0);
        self.sim_time += dt;
    }
}
