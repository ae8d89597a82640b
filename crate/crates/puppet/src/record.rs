//! Demonstration records (JSON lines) and bit-exact follower replay.
//!
//! Line 1 is a header with the model, follower parameters and a config
//! hash; every following line is one row sampled at the command rate.

use puppet_core::follower::FOLLOWER_DT;
use puppet_core::safety::{GateEvent, GateEventKind, LockCause};
use puppet_core::{FollowerGains, FollowerState, JointConfig, RobotModel};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model_file::{bare_message, ModelDoc};
use crate::scenario::FollowerParams;
use crate::session::hex;
use crate::wire::Gripper;

pub const FORMAT_VERSION: u32 = 1;

fn required<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::deserialize(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: u32,
    pub scenario: String,
    pub seed: u64,
    pub model_name: String,
    pub config_hash: String,
    pub model: ModelDoc,
    pub follower: FollowerParams,
    pub initial_q_follower: Vec<f64>,
    pub dt_ns: u64,
    pub ticks_per_row: u64,
}

#[derive(Serialize)]
struct HashInput<'a> {
    format: u32,
    model: &'a ModelDoc,
    follower: &'a FollowerParams,
    initial_q_follower: &'a [f64],
    dt_ns: u64,
    ticks_per_row: u64,
}

impl Header {
    pub fn compute_hash(&self) -> String {
        let input = HashInput {
            format: self.format,
            model: &self.model,
            follower: &self.follower,
            initial_q_follower: &self.initial_q_follower,
            dt_ns: self.dt_ns,
            ticks_per_row: self.ticks_per_row,
        };
        let bytes = serde_json::to_vec(&input).expect("hash input serialises");
        hex(&Sha256::digest(&bytes))
    }
}

/// One gate event as it appears in rows and in the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRow {
    pub t: f64,
    pub event: String,
    #[serde(deserialize_with = "required")]
    pub cause: Option<String>,
    #[serde(deserialize_with = "required")]
    pub joint: Option<usize>,
    pub joint_deltas: Vec<f64>,
}

impl From<&GateEvent> for EventRow {
    fn from(e: &GateEvent) -> Self {
        EventRow {
            t: e.t as f64 / 1e9,
            event: match e.kind {
                GateEventKind::Lock => "lock",
                GateEventKind::Unlock => "unlock",
                GateEventKind::Realign => "realign",
            }
            .into(),
            cause: e.cause.map(|c| c.name().to_string()),
            joint: match e.cause {
                Some(LockCause::Divergence { joint, .. }) => Some(joint),
                _ => None,
            },
            joint_deltas: e.joint_deltas.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRow {
    pub t: f64,
    pub tick: u64,
    pub q_leader: Vec<f64>,
    pub q_follower: Vec<f64>,
    pub q_tilde: Vec<f64>,
    pub gripper: Gripper,
    pub gate_mode: String,
    pub grasp_phase: String,
    /// A target left the leader on this row's tick.
    pub target_sent: bool,
    /// The follower accepted that target on the same tick.
    pub target_delivered: bool,
    pub frozen: bool,
    #[serde(deserialize_with = "required")]
    pub leader_fault: Option<String>,
    pub events: Vec<EventRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRecord {
    pub header: Header,
    pub rows: Vec<DemoRow>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported record format {0} (this build reads {FORMAT_VERSION})")]
    Format(u32),
    #[error("config hash mismatch: header says {stored}, contents hash to {computed}")]
    ConfigHash { stored: String, computed: String },
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
}

impl DemoRecord {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serialises");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serialises"));
            out.push('\n');
        }
        out
    }

    /// Parses and checks structure: header first, hash matches, rows
    /// consistent with the model and strictly increasing in time.
    pub fn from_jsonl(src: &str) -> Result<Self, RecordError> {
        let mut lines = src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(RecordError::Parse {
            line: 1,
            msg: "empty record".into(),
        })?;
        let probe: serde_json::Value = serde_json::from_str(first).map_err(|e| RecordError::Parse {
            line: 1,
            msg: bare_message(&e),
        })?;
        if let Some(f) = probe.get("format").and_then(|v| v.as_u64()) {
            if f != FORMAT_VERSION as u64 {
                return Err(RecordError::Format(f as u32));
            }
        }
        let header: Header = serde_json::from_value(probe).map_err(|e| RecordError::Parse {
            line: 1,
            msg: format!("header: {e}"),
        })?;
        let computed = header.compute_hash();
        if computed != header.config_hash {
            return Err(RecordError::ConfigHash {
                stored: header.config_hash.clone(),
                computed,
            });
        }
        let n = header.model.joints.len();
        let mut rows: Vec<DemoRow> = Vec::new();
        for (i, l) in lines {
            let line = i + 1;
            let row: DemoRow = serde_json::from_str(l).map_err(|e| RecordError::Parse {
                line,
                msg: bare_message(&e),
            })?;
            for (name, v) in [
                ("q_leader", &row.q_leader),
                ("q_follower", &row.q_follower),
                ("q_tilde", &row.q_tilde),
            ] {
                if v.len() != n {
                    return Err(RecordError::Invalid {
                        line,
                        msg: format!("{name} has {} entries, model has {n} joints", v.len()),
                    });
                }
            }
            if let Some(prev) = rows.last() {
                if row.t <= prev.t {
                    return Err(RecordError::Invalid {
                        line,
                        msg: format!("t = {} does not increase (previous {})", row.t, prev.t),
                    });
                }
                if row.tick != prev.tick + header.ticks_per_row {
                    return Err(RecordError::Invalid {
                        line,
                        msg: format!("tick {} does not follow {}", row.tick, prev.tick),
                    });
                }
            } else if row.tick != 0 {
                return Err(RecordError::Invalid {
                    line,
                    msg: "first row must be tick 0".into(),
                });
            }
            rows.push(row);
        }
        Ok(DemoRecord { header, rows })
    }

    pub fn model(&self) -> Result<RobotModel, String> {
        self.header.model.to_model().map_err(|(p, m)| format!("{p}: {m}"))
    }
}

/// First row where the recomputed follower differs from the recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMismatch {
    /// 1-based line in the record file.
    pub line: usize,
    pub row: usize,
    pub t: f64,
    pub field: &'static str,
    pub joint: usize,
    pub recorded: f64,
    pub replayed: f64,
}

impl std::fmt::Display for ReplayMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "line {} (row {}, t = {} s): {}[{}] recorded {:e}, replayed {:e}",
            self.line, self.row, self.t, self.field, self.joint, self.recorded, self.replayed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("invalid record header: {0}")]
    Header(String),
    #[error("replay mismatch at {0}")]
    Mismatch(ReplayMismatch),
}

/// Re-runs the follower from the recorded targets and checks `q_follower`
/// and `q_tilde` bit for bit on every row.
pub fn replay(record: &DemoRecord) -> Result<(), ReplayError> {
    let h = &record.header;
    let model = record.model().map_err(ReplayError::Header)?;
    let gains = FollowerGains::new(h.follower.kp.clone(), h.follower.kd.clone())
        .map_err(|e| ReplayError::Header(e.to_string()))?;
    let mut state = FollowerState::at_rest(JointConfig::from(h.initial_q_follower.as_slice()), h.follower.alpha)
        .map_err(|e| ReplayError::Header(e.to_string()))?;
    if h.dt_ns != 1_000_000 {
        return Err(ReplayError::Header(format!("unsupported dt_ns {}", h.dt_ns)));
    }
    let mut seq = 0u64;
    let mut faulted = false;
    let mut tick = 0u64;
    let mut frozen = false;
    for (i, row) in record.rows.iter().enumerate() {
        // ticks between rows keep the previous row's freeze state
        while tick < row.tick {
            advance(&mut state, &gains, &model, frozen, &mut faulted);
            tick += 1;
        }
        if row.target_delivered {
            state.ingest_target(seq, &row.q_leader);
            seq += 1;
        }
        frozen = row.frozen;
        advance(&mut state, &gains, &model, frozen, &mut faulted);
        tick += 1;
        for (field, rec, got) in [
            ("q_follower", &row.q_follower, state.q.values()),
            ("q_tilde", &row.q_tilde, state.filter().q_tilde().values()),
        ] {
            if let Some(j) = (0..rec.len()).find(|&j| rec[j].to_bits() != got[j].to_bits()) {
                return Err(ReplayError::Mismatch(ReplayMismatch {
                    line: i + 2,
                    row: i,
                    t: row.t,
                    field,
                    joint: j,
                    recorded: rec[j],
                    replayed: got[j],
                }));
            }
        }
    }
    Ok(())
}

fn advance(state: &mut FollowerState, gains: &FollowerGains, model: &RobotModel, frozen: bool, faulted: &mut bool) {
    if frozen || *faulted {
        state.hold_tick(FOLLOWER_DT);
    } else if state.tick(gains, model, FOLLOWER_DT).is_err() {
        *faulted = true;
    }
}
