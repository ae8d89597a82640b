//! Lockstep scenario runner.

use puppet_core::clock::{secs_to_nanos, Nanos};
use puppet_core::leader::CommandOutcome;
use puppet_core::{FollowerGains, RobotModel};
use thiserror::Error;

use crate::metrics::{self, Metrics};
use crate::model_file::ModelDoc;
use crate::record::{DemoRecord, DemoRow, EventRow, Header, FORMAT_VERSION};
use crate::scenario::{FaultKind, Operator, OperatorSource, Scenario};
use crate::session::{
    fault_name, grasp_name, mode_name, BridgeConfig, FollowerEndpoint, LeaderEndpoint,
    LockstepSession, TICK_HZ, TICK_NS,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("`{0}`: {1}")]
    Invalid(String, String),
    #[error("an external operator needs an interactive session (`puppet serve`)")]
    External,
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: DemoRecord,
    pub metrics: Metrics,
    /// Every gate event in order, as written to the event log.
    pub events: Vec<EventRow>,
    /// SHA-256 over every frame put on the wire, both directions.
    pub transcript_digest: String,
    pub frames: u64,
    pub targets_sent: u64,
    pub follower_ticks: u64,
    pub follower_fault: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Freeze(bool),
    Link(bool),
    Teleport { joint: Option<usize>, dq: f64 },
    Realign,
}

/// Faults act on the first command tick at or after their time.
fn schedule(s: &Scenario, command_every: u64, total_ticks: u64) -> Vec<(u64, Action)> {
    let period: Nanos = command_every * TICK_NS;
    let snap = |t: f64| secs_to_nanos(t).div_ceil(period) * command_every;
    let mut out = Vec::new();
    for f in &s.fault_injections {
        let start = snap(f.t);
        let end = f.duration.map(|d| snap(f.t + d)).unwrap_or(u64::MAX);
        match f.kind {
            FaultKind::FreezeFollower => {
                out.push((start, Action::Freeze(true)));
                out.push((end, Action::Freeze(false)));
            }
            FaultKind::DropLink => {
                out.push((start, Action::Link(false)));
                out.push((end, Action::Link(true)));
            }
            FaultKind::TeleportLeader => out.push((
                start,
                Action::Teleport {
                    joint: f.joint,
                    dq: f.dq.unwrap_or(0.0),
                },
            )),
            FaultKind::Realign => out.push((start, Action::Realign)),
        }
    }
    out.retain(|(t, _)| *t < total_ticks);
    out.sort_by_key(|(t, _)| *t);
    out
}

fn apply(session: &mut LockstepSession, actions: &[(u64, Action)]) {
    let now = session.now();
    let tick = session.tick();
    for (_, a) in actions.iter().filter(|(t, _)| *t == tick) {
        match *a {
            Action::Freeze(on) => session.follower.frozen = on,
            Action::Link(up) => session.set_link_up(up),
            Action::Teleport { joint, dq } => session.leader.teleport(joint, dq),
            Action::Realign => session.leader.realign(now),
        }
    }
}

pub fn header_for(s: &Scenario, model: &RobotModel, ticks_per_row: u64) -> Header {
    let mut h = Header {
        format: FORMAT_VERSION,
        scenario: s.name.clone(),
        seed: s.seed,
        model_name: model.name().to_string(),
        config_hash: String::new(),
        model: ModelDoc::from_model(model),
        follower: s.follower.clone(),
        initial_q_follower: s.initial_config(model).into_inner(),
        dt_ns: TICK_NS,
        ticks_per_row,
    };
    h.config_hash = h.compute_hash();
    h
}

/// Runs a scenario to completion on the virtual clock.
pub fn run_scenario(s: &Scenario, model: &RobotModel) -> Result<RunOutput, RunError> {
    s.check(model).map_err(|(p, m)| RunError::Invalid(p, m))?;
    if matches!(s.operator, Operator::External {}) {
        return Err(RunError::External);
    }
    let bridge = BridgeConfig::default();
    let q0 = s.initial_config(model);
    let gains = FollowerGains::new(s.follower.kp.clone(), s.follower.kd.clone())
        .map_err(|e| RunError::Setup(e.to_string()))?;
    let leader = LeaderEndpoint::new(model, q0.clone(), q0.clone(), &bridge, 0).map_err(RunError::Setup)?;
    let follower =
        FollowerEndpoint::new(model, q0, s.follower.alpha, gains, &bridge).map_err(RunError::Setup)?;
    let mut session = LockstepSession::new(leader, follower, model.dof());
    let command_every = TICK_HZ / bridge.publish_rate_hz as u64;
    let total_ticks = secs_to_nanos(s.duration) / TICK_NS;
    let actions = schedule(s, command_every, total_ticks);
    let mut operator = OperatorSource::new(s, model);

    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut pending: Vec<EventRow> = Vec::new();
    for tick in 0..total_ticks {
        let command = session.is_command_tick();
        let t = tick as f64 / TICK_HZ as f64;
        let sample = if command { operator.sample(t) } else { None };
        let report = session.step(sample.as_ref(), |sess| apply(sess, &actions));
        pending.extend(report.events.iter().map(EventRow::from));
        if !command {
            continue;
        }
        let leader = session.leader.leader().state();
        let follower = session.follower.state();
        let leader_fault = match &report.outcome {
            Some(CommandOutcome::Rejected(cause)) => Some(fault_name(cause).to_string()),
            _ => None,
        };
        events.extend(pending.iter().cloned());
        rows.push(DemoRow {
            t,
            tick,
            q_leader: leader.q.values().to_vec(),
            q_follower: follower.q.values().to_vec(),
            q_tilde: follower.filter().q_tilde().values().to_vec(),
            gripper: session.leader.gripper(),
            gate_mode: mode_name(&session.leader.gate().mode()).into(),
            grasp_phase: grasp_name(&leader.grasp).into(),
            target_sent: report.targets_sent > 0,
            target_delivered: report.target_delivered,
            frozen: session.follower.frozen,
            leader_fault,
            events: std::mem::take(&mut pending),
        });
    }
    events.extend(pending);
    let record = DemoRecord {
        header: header_for(s, model, command_every),
        rows,
    };
    let metrics = metrics::compute(&record);
    Ok(RunOutput {
        metrics,
        events,
        transcript_digest: session.transcript.digest(),
        frames: session.transcript.frames,
        targets_sent: session.leader.targets_sent(),
        follower_ticks: session.follower.ticks(),
        follower_fault: session
            .follower
            .fault()
            .map(|f| format!("joint {} became non-finite ({})", f.joint, f.value)),
        record,
    })
}
