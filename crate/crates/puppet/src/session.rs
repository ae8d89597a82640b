//! Leader and follower endpoints and the lockstep session that wires them
//! together over an in-memory link.
//!
//! Endpoints speak [`WireMessage`]s only, so the same code runs in lockstep
//! tests and over sockets in interactive mode.

use std::collections::VecDeque;

use puppet_core::clock::{Nanos, RateDivider, NANOS_PER_MS};
use puppet_core::follower::{Ingest, FOLLOWER_DT};
use puppet_core::kinematics::{link_poses, IkFailure};
use puppet_core::leader::{
    CommandOutcome, FaultCause, GraspColor, LeaderConfig, VelocityViolation,
};
use puppet_core::plant::PlantFault;
use puppet_core::safety::{GateEvent, GateMode, LockCause};
use puppet_core::{
    FollowerGains, FollowerState, GateState, GraspPhase, JointConfig, Leader, Mailbox, Overlay,
    RobotModel, Verdict,
};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wire::{self, Gripper, WireMessage, WirePose, ERR_STATE};
use crate::scenario::ControllerSample;

/// Control loop rate shared by both arms.
pub const TICK_HZ: u64 = 1000;
pub const TICK_NS: Nanos = NANOS_PER_MS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeConfig {
    pub host: String,
    pub port: u16,
    pub publish_rate_hz: u32,
    pub heartbeat_rate_hz: u32,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            host: "127.0.0.1".into(),
            port: wire::DEFAULT_PORT,
            publish_rate_hz: 50,
            heartbeat_rate_hz: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("rate {0} Hz must be > 0 and divide {TICK_HZ} Hz")]
pub struct RateError(pub u32);

impl BridgeConfig {
    fn dividers(&self) -> Result<(RateDivider, RateDivider), RateError> {
        let div = |r: u32| {
            if r == 0 || TICK_HZ % r as u64 != 0 {
                Err(RateError(r))
            } else {
                Ok(RateDivider::new(TICK_HZ, r as u64))
            }
        };
        Ok((div(self.publish_rate_hz)?, div(self.heartbeat_rate_hz)?))
    }
}

pub fn grasp_name(g: &GraspPhase) -> &'static str {
    match g {
        GraspPhase::Idle => "idle",
        GraspPhase::Hover => "hover",
        GraspPhase::Engaged(_) => "engaged",
        GraspPhase::Faulted(_) => "faulted",
    }
}

pub fn color_name(c: GraspColor) -> &'static str {
    match c {
        GraspColor::White => "white",
        GraspColor::Blue => "blue",
        GraspColor::Green => "green",
        GraspColor::Red => "red",
    }
}

pub fn overlay_name(o: Overlay) -> &'static str {
    match o {
        Overlay::Green => "green",
        Overlay::Red => "red",
    }
}

pub fn mode_name(m: &GateMode) -> &'static str {
    match m {
        GateMode::Streaming => "streaming",
        GateMode::Locked { .. } => "locked",
    }
}

/// Short tag for a leader fault, e.g. `ik:max_iterations`.
pub fn fault_name(cause: &FaultCause) -> &'static str {
    match cause {
        FaultCause::Ik(IkFailure::MaxIterations) => "ik:max_iterations",
        FaultCause::Ik(IkFailure::SingularityStall) => "ik:singularity_stall",
        FaultCause::Ik(IkFailure::StepVelocityExceeded) => "ik:step_velocity_exceeded",
        FaultCause::VelocityLimit(VelocityViolation::EndEffector { .. }) => "velocity:end_effector",
        FaultCause::VelocityLimit(VelocityViolation::Joint { .. }) => "velocity:joint",
        FaultCause::NonFinite(_) => "non_finite",
    }
}

fn wire_poses(model: &RobotModel, q: &[f64]) -> Vec<WirePose> {
    link_poses(model, q)
        .expect("joint count checked at construction")
        .iter()
        .map(WirePose::from)
        .collect()
}

/// Leader side: the virtual arm, its gate and the send path.
#[derive(Debug, Clone)]
pub struct LeaderEndpoint {
    model: RobotModel,
    leader: Leader,
    gate: GateState,
    follower_q: JointConfig,
    gripper: Gripper,
    publish: RateDivider,
    heartbeat: RateDivider,
    target_seq: u64,
    heartbeat_seq: u64,
    status_seq: u64,
    rejected: Option<FaultCause>,
    events: Vec<GateEvent>,
}

impl LeaderEndpoint {
    /// `q_follower` is the follower configuration known at start-up.
    pub fn new(
        model: &RobotModel,
        q: JointConfig,
        q_follower: JointConfig,
        bridge: &BridgeConfig,
        now: Nanos,
    ) -> Result<Self, String> {
        let (publish, heartbeat) = bridge.dividers().map_err(|e| e.to_string())?;
        if q_follower.len() != model.dof() {
            return Err(format!("follower configuration has {} joints", q_follower.len()));
        }
        let leader = Leader::new(model, q, LeaderConfig::for_model(model)).map_err(|e| e.to_string())?;
        Ok(LeaderEndpoint {
            model: model.clone(),
            leader,
            gate: GateState::new(now),
            follower_q: q_follower,
            gripper: Gripper::Open,
            publish,
            heartbeat,
            target_seq: 0,
            heartbeat_seq: 0,
            status_seq: 0,
            rejected: None,
            events: Vec::new(),
        })
    }

    pub fn leader(&self) -> &Leader {
        &self.leader
    }

    pub fn gate(&self) -> &GateState {
        &self.gate
    }

    pub fn follower_q(&self) -> &JointConfig {
        &self.follower_q
    }

    pub fn gripper(&self) -> Gripper {
        self.gripper
    }

    pub fn targets_sent(&self) -> u64 {
        self.target_seq
    }

    /// Gate events since the last call.
    pub fn take_events(&mut self) -> Vec<GateEvent> {
        std::mem::take(&mut self.events)
    }

    /// Handles an inbound message. Anything from the follower counts as a
    /// heartbeat.
    pub fn receive(&mut self, msg: &WireMessage, now: Nanos) {
        match msg {
            WireMessage::FollowerState { q, .. } => {
                self.gate.heartbeat(now);
                if q.len() == self.model.dof() {
                    self.follower_q = JointConfig::from(q.as_slice());
                }
            }
            WireMessage::Heartbeat { .. } => self.gate.heartbeat(now),
            WireMessage::Error { code, .. } if *code == ERR_STATE => {
                self.gate.heartbeat(now);
                let deltas = self.deltas();
                self.events
                    .extend(self.gate.lock(LockCause::FollowerFault, now, deltas));
            }
            WireMessage::Realign { .. } => self.realign(now),
            _ => {}
        }
    }

    fn deltas(&self) -> Vec<f64> {
        self.leader
            .state()
            .q
            .iter()
            .zip(self.follower_q.iter())
            .map(|(l, f)| l - f)
            .collect()
    }

    pub fn realign(&mut self, now: Nanos) {
        let mut state = self.leader.state().clone();
        let ev = self.gate.realign(&mut state, &self.follower_q, now);
        self.leader.set_state(state);
        self.events.extend(ev);
    }

    /// Fault injection: moves leader joints instantaneously (clamped to the
    /// model limits) and stops them.
    pub fn teleport(&mut self, joint: Option<usize>, dq: f64) {
        let mut state = self.leader.state().clone();
        for (i, j) in self.model.joints().iter().enumerate() {
            if joint.is_none() || joint == Some(i) {
                state.q[i] = (state.q[i] + dq).clamp(j.lower, j.upper);
                state.q_dot[i] = 0.0;
            }
        }
        self.leader.set_state(state);
    }

    /// Feeds one operator sample at the command rate.
    pub fn command(&mut self, sample: Option<&ControllerSample>) -> CommandOutcome {
        let Some(s) = sample else {
            return CommandOutcome::Holding;
        };
        self.gripper = if s.trigger { Gripper::Close } else { Gripper::Open };
        let outcome = self.leader.command(&self.model, &s.pose, s.pressed);
        if let CommandOutcome::Rejected(cause) = outcome {
            self.rejected = Some(cause);
        }
        outcome
    }

    /// One leader plant step. A plant fault locks the stream.
    pub fn step(&mut self, now: Nanos) {
        self.leader.step(&self.model);
        if let GraspPhase::Faulted(FaultCause::NonFinite(_)) = self.leader.state().grasp {
            let deltas = self.deltas();
            self.events
                .extend(self.gate.lock(LockCause::LeaderFault, now, deltas));
        }
    }

    /// Send path for one tick: on publish ticks the gate decides whether the
    /// current configuration goes out; heartbeats flow regardless. A command
    /// rejected in this cycle suppresses the target.
    pub fn publish(&mut self, tick: u64, now: Nanos) -> Vec<WireMessage> {
        let mut out = Vec::new();
        if self.publish.fires(tick) {
            let q = self.leader.state().q.clone();
            let (verdict, ev) = self.gate.gate(&q, &self.follower_q, now);
            self.events.extend(ev);
            if verdict == Verdict::Forward && self.rejected.is_none() {
                out.push(WireMessage::LeaderJointTarget {
                    seq: self.target_seq,
                    t_mono_ns: now,
                    q: q.into_inner(),
                    gripper: self.gripper,
                });
                self.target_seq += 1;
            }
            self.rejected = None;
        }
        if self.heartbeat.fires(tick) {
            out.push(WireMessage::Heartbeat {
                seq: self.heartbeat_seq,
            });
            self.heartbeat_seq += 1;
        }
        out
    }

    /// Console broadcast describing the leader and the gate.
    pub fn status(&mut self, now: Nanos) -> WireMessage {
        let state = self.leader.state();
        let lock_cause = match self.gate.mode() {
            GateMode::Locked { cause, .. } => Some(cause.name().to_string()),
            GateMode::Streaming => None,
        };
        let fault = match &state.grasp {
            GraspPhase::Faulted(c) => Some(fault_name(c).to_string()),
            _ => None,
        };
        let msg = WireMessage::LeaderStatus {
            seq: self.status_seq,
            t_mono_ns: now,
            q: state.q.values().to_vec(),
            link_poses: wire_poses(&self.model, &state.q),
            grasp: color_name(state.grasp.color()).into(),
            overlay: overlay_name(self.gate.overlay()).into(),
            gate: mode_name(&self.gate.mode()).into(),
            lock_cause,
            fault,
        };
        self.status_seq += 1;
        msg
    }
}

/// Follower side: target mailbox, filtered PD arm and feedback publisher.
#[derive(Debug, Clone)]
pub struct FollowerEndpoint {
    model: RobotModel,
    state: FollowerState,
    gains: FollowerGains,
    mailbox: Mailbox<(u64, Vec<f64>)>,
    publish: RateDivider,
    heartbeat: RateDivider,
    state_seq: u64,
    heartbeat_seq: u64,
    pub frozen: bool,
    fault: Option<PlantFault>,
    fault_reported: bool,
    ticks: u64,
}

impl FollowerEndpoint {
    pub fn new(
        model: &RobotModel,
        q: JointConfig,
        alpha: f64,
        gains: FollowerGains,
        bridge: &BridgeConfig,
    ) -> Result<Self, String> {
        let (publish, heartbeat) = bridge.dividers().map_err(|e| e.to_string())?;
        if q.len() != model.dof() || gains.len() != model.dof() {
            return Err(format!("follower state or gains do not match the {}-joint model", model.dof()));
        }
        let state = FollowerState::at_rest(q, alpha).map_err(|e| e.to_string())?;
        Ok(FollowerEndpoint {
            model: model.clone(),
            state,
            gains,
            mailbox: Mailbox::default(),
            publish,
            heartbeat,
            state_seq: 0,
            heartbeat_seq: 0,
            frozen: false,
            fault: None,
            fault_reported: false,
            ticks: 0,
        })
    }

    pub fn state(&self) -> &FollowerState {
        &self.state
    }

    pub fn fault(&self) -> Option<PlantFault> {
        self.fault
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Network side: only the newest target is kept.
    pub fn receive(&mut self, msg: &WireMessage) {
        if let WireMessage::LeaderJointTarget { seq, q, .. } = msg {
            self.mailbox.post((*seq, q.clone()));
        }
    }

    /// One 1 kHz tick: drain the mailbox, then step the arm (or hold it when
    /// frozen or faulted). Returns whether a new target was accepted.
    pub fn tick(&mut self) -> bool {
        let accepted = match self.mailbox.take() {
            Some((seq, q)) => self.state.ingest_target(seq, &q) == Ingest::Accepted,
            None => false,
        };
        if self.frozen || self.fault.is_some() {
            self.state.hold_tick(FOLLOWER_DT);
        } else if let Err(f) = self.state.tick(&self.gains, &self.model, FOLLOWER_DT) {
            self.fault = Some(f);
        }
        self.ticks += 1;
        accepted
    }

    pub fn publish(&mut self, tick: u64, now: Nanos) -> Vec<WireMessage> {
        let mut out = Vec::new();
        if let (Some(f), false) = (self.fault, self.fault_reported) {
            out.push(WireMessage::Error {
                code: ERR_STATE,
                text: format!("follower joint {} became non-finite ({})", f.joint, f.value),
            });
            self.fault_reported = true;
        }
        if self.publish.fires(tick) {
            out.push(WireMessage::FollowerState {
                seq: self.state_seq,
                t_mono_ns: now,
                q: self.state.q.values().to_vec(),
                q_dot: self.state.q_dot.clone(),
                link_poses: wire_poses(&self.model, &self.state.q),
            });
            self.state_seq += 1;
        }
        if self.heartbeat.fires(tick) {
            out.push(WireMessage::Heartbeat {
                seq: self.heartbeat_seq,
            });
            self.heartbeat_seq += 1;
        }
        out
    }
}

/// One direction of the in-memory transport. Frames sent while the link is
/// down are lost.
#[derive(Debug, Clone)]
pub struct VirtualLink {
    pub up: bool,
    in_flight: VecDeque<Vec<u8>>,
    pub sent: u64,
    pub lost: u64,
}

impl Default for VirtualLink {
    fn default() -> Self {
        VirtualLink {
            up: true,
            in_flight: VecDeque::new(),
            sent: 0,
            lost: 0,
        }
    }
}

impl VirtualLink {
    pub fn send(&mut self, frame: Vec<u8>) {
        self.sent += 1;
        if self.up {
            self.in_flight.push_back(frame);
        } else {
            self.lost += 1;
        }
    }

    pub fn drain(&mut self) -> Vec<Vec<u8>> {
        self.in_flight.drain(..).collect()
    }
}

/// Counters and a digest of every frame put on either link.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    hasher: Sha256,
    pub frames: u64,
    pub bytes: u64,
    pub targets: u64,
}

impl Transcript {
    fn record(&mut self, frame: &[u8], msg: &WireMessage) {
        self.hasher.update(frame);
        self.frames += 1;
        self.bytes += frame.len() as u64;
        if matches!(msg, WireMessage::LeaderJointTarget { .. }) {
            self.targets += 1;
        }
    }

    pub fn digest(&self) -> String {
        hex(&self.hasher.clone().finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// What happened during one lockstep tick.
#[derive(Debug, Clone, Default)]
pub struct TickReport {
    pub outcome: Option<CommandOutcome>,
    pub targets_sent: usize,
    pub target_delivered: bool,
    pub events: Vec<GateEvent>,
}

/// Both endpoints on one virtual clock, exchanging encoded frames.
#[derive(Debug, Clone)]
pub struct LockstepSession {
    pub leader: LeaderEndpoint,
    pub follower: FollowerEndpoint,
    pub to_follower: VirtualLink,
    pub to_leader: VirtualLink,
    pub transcript: Transcript,
    dof: usize,
    tick: u64,
    command_every: u64,
}

impl LockstepSession {
    pub fn new(leader: LeaderEndpoint, follower: FollowerEndpoint, dof: usize) -> Self {
        let command_every = leader.publish.every();
        LockstepSession {
            leader,
            follower,
            to_follower: VirtualLink::default(),
            to_leader: VirtualLink::default(),
            transcript: Transcript::default(),
            dof,
            tick: 0,
            command_every,
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn now(&self) -> Nanos {
        self.tick * TICK_NS
    }

    pub fn is_command_tick(&self) -> bool {
        self.tick % self.command_every == 0
    }

    pub fn set_link_up(&mut self, up: bool) {
        self.to_follower.up = up;
        self.to_leader.up = up;
    }

    fn send(link: &mut VirtualLink, transcript: &mut Transcript, msgs: Vec<WireMessage>) {
        for m in msgs {
            let frame = wire::encode(&m).expect("endpoint messages are finite");
            transcript.record(&frame, &m);
            link.send(frame);
        }
    }

    fn deliver(link: &mut VirtualLink, dof: usize) -> Vec<WireMessage> {
        link.drain()
            .iter()
            .map(|f| wire::decode(f, Some(dof)).expect("endpoints emit valid frames"))
            .collect()
    }

    /// Runs one 1 kHz tick. `before_command` runs on command ticks ahead of
    /// the operator sample (fault injection hook).
    pub fn step(
        &mut self,
        sample: Option<&ControllerSample>,
        before_command: impl FnOnce(&mut Self),
    ) -> TickReport {
        let now = self.now();
        let tick = self.tick;
        let mut report = TickReport::default();
        for m in Self::deliver(&mut self.to_leader, self.dof) {
            self.leader.receive(&m, now);
        }
        if self.is_command_tick() {
            before_command(self);
            report.outcome = Some(self.leader.command(sample));
        }
        self.leader.step(now);
        let out = self.leader.publish(tick, now);
        report.targets_sent = out
            .iter()
            .filter(|m| matches!(m, WireMessage::LeaderJointTarget { .. }))
            .count();
        Self::send(&mut self.to_follower, &mut self.transcript, out);
        for m in Self::deliver(&mut self.to_follower, self.dof) {
            self.follower.receive(&m);
        }
        report.target_delivered = self.follower.tick();
        let out = self.follower.publish(tick, now);
        Self::send(&mut self.to_leader, &mut self.transcript, out);
        report.events = self.leader.take_events();
        self.tick += 1;
        report
    }
}
