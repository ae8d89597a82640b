//! Leader/follower interlock: divergence lock, heartbeat timeout and
//! realignment.
//!
//! The overlay color is derived from the mode, never stored, so the two
//! cannot disagree.

use alloc::vec::Vec;

use crate::clock::{Nanos, NANOS_PER_MS};
use crate::leader::{GraspPhase, LeaderState};
use crate::model::JointConfig;

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 0.2;
pub const DEFAULT_TIMEOUT: Nanos = 200 * NANOS_PER_MS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Aligned,
    Diverged { joint: usize, delta: f64 },
}

/// First joint whose absolute difference is strictly above `threshold`.
pub fn divergence_check(q_leader: &[f64], q_follower: &[f64], threshold: f64) -> Divergence {
    debug_assert_eq!(q_leader.len(), q_follower.len());
    q_leader
        .iter()
        .zip(q_follower)
        .enumerate()
        .find_map(|(joint, (l, f))| {
            let delta = libm::fabs(l - f);
            (delta > threshold).then_some(Divergence::Diverged { joint, delta })
        })
        .unwrap_or(Divergence::Aligned)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LockCause {
    Divergence { joint: usize, delta: f64 },
    Timeout,
    LeaderFault,
    FollowerFault,
}

impl LockCause {
    pub fn name(&self) -> &'static str {
        match self {
            LockCause::Divergence { .. } => "divergence",
            LockCause::Timeout => "timeout",
            LockCause::LeaderFault => "leader_fault",
            LockCause::FollowerFault => "follower_fault",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode {
    Streaming,
    Locked { cause: LockCause, since: Nanos },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlay {
    Green,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateEventKind {
    Lock,
    Unlock,
    Realign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateEvent {
    pub t: Nanos,
    pub kind: GateEventKind,
    pub cause: Option<LockCause>,
    /// `q_leader − q_follower` at the time of the event, when known.
    pub joint_deltas: Vec<f64>,
}

fn deltas(q_leader: &[f64], q_follower: &[f64]) -> Vec<f64> {
    q_leader.iter().zip(q_follower).map(|(l, f)| l - f).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateState {
    mode: GateMode,
    last_heartbeat: Nanos,
    pub divergence_threshold: f64,
    pub timeout: Nanos,
}

impl GateState {
    pub fn new(now: Nanos) -> Self {
        GateState {
            mode: GateMode::Streaming,
            last_heartbeat: now,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn mode(&self) -> GateMode {
        self.mode
    }

    pub fn overlay(&self) -> Overlay {
        match self.mode {
            GateMode::Streaming => Overlay::Green,
            GateMode::Locked { .. } => Overlay::Red,
        }
    }

    pub fn is_locked(&self) -> bool {
        matches!(self.mode, GateMode::Locked { .. })
    }

    pub fn last_heartbeat(&self) -> Nanos {
        self.last_heartbeat
    }

    /// Records that something arrived from the peer.
    pub fn heartbeat(&mut self, now: Nanos) {
        self.last_heartbeat = self.last_heartbeat.max(now);
    }

    /// Locks with `cause` unless already locked.
    pub fn lock(&mut self, cause: LockCause, now: Nanos, joint_deltas: Vec<f64>) -> Option<GateEvent> {
        if self.is_locked() {
            return None;
        }
        self.mode = GateMode::Locked { cause, since: now };
        Some(GateEvent {
            t: now,
            kind: GateEventKind::Lock,
            cause: Some(cause),
            joint_deltas,
        })
    }

    /// Decides whether the current leader configuration may be sent.
    ///
    /// A stale heartbeat locks with `Timeout`, a joint difference above the
    /// threshold locks with `Divergence`. Once locked, everything is blocked
    /// until [`GateState::realign`].
    pub fn gate(
        &mut self,
        q_leader: &[f64],
        q_follower: &[f64],
        now: Nanos,
    ) -> (Verdict, Option<GateEvent>) {
        if self.is_locked() {
            return (Verdict::Blocked, None);
        }
        if now.saturating_sub(self.last_heartbeat) > self.timeout {
            let ev = self.lock(LockCause::Timeout, now, deltas(q_leader, q_follower));
            return (Verdict::Blocked, ev);
        }
        match divergence_check(q_leader, q_follower, self.divergence_threshold) {
            Divergence::Aligned => (Verdict::Forward, None),
            Divergence::Diverged { joint, delta } => {
                let ev = self.lock(
                    LockCause::Divergence { joint, delta },
                    now,
                    deltas(q_leader, q_follower),
                );
                (Verdict::Blocked, ev)
            }
        }
    }

    /// Snaps the leader onto the follower and reopens the stream.
    ///
    /// Emits a `Realign` event, followed by `Unlock` if a lock was cleared.
    pub fn realign(
        &mut self,
        leader: &mut LeaderState,
        q_follower: &JointConfig,
        now: Nanos,
    ) -> Vec<GateEvent> {
        let joint_deltas = deltas(&leader.q, q_follower);
        leader.q.clone_from(q_follower);
        leader.q_dot.iter_mut().for_each(|v| *v = 0.0);
        leader.grasp = GraspPhase::Idle;
        let mut events = alloc::vec![GateEvent {
            t: now,
            kind: GateEventKind::Realign,
            cause: None,
            joint_deltas,
        }];
        if let GateMode::Locked { cause, .. } = self.mode {
            events.push(GateEvent {
                t: now,
                kind: GateEventKind::Unlock,
                cause: Some(cause),
                joint_deltas: alloc::vec![0.0; q_follower.len()],
            });
        }
        self.mode = GateMode::Streaming;
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_examples() {
        let z = [0.0; 7];
        assert_eq!(divergence_check(&z, &z, 0.2), Divergence::Aligned);
        let mut q = z;
        q[4] = 0.25;
        assert_eq!(
            divergence_check(&q, &z, 0.2),
            Divergence::Diverged {
                joint: 4,
                delta: 0.25
            }
        );
        assert_eq!(divergence_check(&[0.2; 7], &z, 0.2), Divergence::Aligned);
    }

    #[test]
    fn forward_then_lock_then_absorb() {
        let mut g = GateState::new(0);
        let z = [0.0; 7];
        let (v, ev) = g.gate(&z, &z, 10 * NANOS_PER_MS);
        assert_eq!((v, ev), (Verdict::Forward, None));
        assert_eq!(g.overlay(), Overlay::Green);

        let mut q = z;
        q[1] = 0.3;
        let (v, ev) = g.gate(&q, &z, 20 * NANOS_PER_MS);
        assert_eq!(v, Verdict::Blocked);
        let ev = ev.unwrap();
        assert_eq!(ev.kind, GateEventKind::Lock);
        assert!(matches!(ev.cause, Some(LockCause::Divergence { joint: 1, .. })));
        assert_eq!(g.overlay(), Overlay::Red);

        // back under threshold, still locked
        g.heartbeat(30 * NANOS_PER_MS);
        assert_eq!(g.gate(&z, &z, 30 * NANOS_PER_MS), (Verdict::Blocked, None));
    }

    #[test]
    fn timeout_is_strict() {
        let mut g = GateState::new(0);
        let z = [0.0; 2];
        assert_eq!(g.gate(&z, &z, DEFAULT_TIMEOUT).0, Verdict::Forward);
        let (v, ev) = g.gate(&z, &z, DEFAULT_TIMEOUT + 1);
        assert_eq!(v, Verdict::Blocked);
        assert_eq!(ev.unwrap().cause, Some(LockCause::Timeout));
    }

    #[test]
    fn realign_resets_leader_and_unlocks() {
        let mut g = GateState::new(0);
        let mut leader = LeaderState::at_rest(JointConfig::new(alloc::vec![0.5, 0.0]));
        leader.q_dot[0] = 1.0;
        let qf = JointConfig::new(alloc::vec![0.1, -0.1]);
        g.gate(&leader.q, &qf, 0);
        assert!(g.is_locked());
        let ev = g.realign(&mut leader, &qf, 5);
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].kind, GateEventKind::Realign);
        assert_eq!(ev[1].kind, GateEventKind::Unlock);
        assert_eq!(leader.q, qf);
        assert_eq!(leader.q_dot, [0.0, 0.0]);
        assert_eq!(leader.grasp, GraspPhase::Idle);
        assert_eq!(g.mode(), GateMode::Streaming);
        assert_eq!(divergence_check(&leader.q, &qf, 0.2), Divergence::Aligned);

        // idempotent while streaming
        let ev = g.realign(&mut leader, &qf, 6);
        assert_eq!(ev.len(), 1);
        assert_eq!(leader.q, qf);
    }
}
