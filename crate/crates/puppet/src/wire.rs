//! Framed JSON wire protocol shared by the leader, the follower and the
//! console gateway.
//!
//! A frame is a 4-byte little-endian payload length followed by a UTF-8
//! JSON object whose `type` field names the message. Decoding is strict
//! about the known fields and tolerant of extra ones.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use puppet_core::Pose;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 10405;
pub const DEFAULT_UI_PORT: u16 = 10406;
/// Largest payload a decoder will accept.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

pub const ERR_VERSION: u32 = 1;
pub const ERR_MODEL: u32 = 2;
pub const ERR_DECODE: u32 = 3;
pub const ERR_STATE: u32 = 4;

/// Message type names in schema order.
pub const MESSAGE_TYPES: [&str; 8] = [
    "hello",
    "leader_joint_target",
    "follower_state",
    "realign",
    "heartbeat",
    "error",
    "controller_input",
    "leader_status",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    Open,
    Close,
}

/// Pose on the wire: position in m, orientation as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl From<&Pose> for WirePose {
    fn from(p: &Pose) -> Self {
        let q = p.orientation.quaternion();
        WirePose {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl WirePose {
    /// Converts to a [`Pose`], renormalising the quaternion.
    pub fn to_pose(&self) -> Pose {
        let [w, x, y, z] = self.orientation;
        Pose::new(
            Vector3::from(self.position),
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        )
    }

    fn quaternion_norm(&self) -> f64 {
        self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn required<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::deserialize(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        version: u32,
        model_name: String,
    },
    LeaderJointTarget {
        seq: u64,
        t_mono_ns: u64,
        q: Vec<f64>,
        gripper: Gripper,
    },
    FollowerState {
        seq: u64,
        t_mono_ns: u64,
        q: Vec<f64>,
        q_dot: Vec<f64>,
        link_poses: Vec<WirePose>,
    },
    Realign {
        seq: u64,
    },
    Heartbeat {
        seq: u64,
    },
    Error {
        code: u32,
        text: String,
    },
    /// Console → leader: one operator controller sample.
    ControllerInput {
        seq: u64,
        t_mono_ns: u64,
        pose: WirePose,
        pressed: bool,
        trigger: bool,
    },
    /// Leader → console: leader arm, grasp sphere and gate state.
    LeaderStatus {
        seq: u64,
        t_mono_ns: u64,
        q: Vec<f64>,
        link_poses: Vec<WirePose>,
        grasp: String,
        overlay: String,
        gate: String,
        #[serde(deserialize_with = "required")]
        lock_cause: Option<String>,
        #[serde(deserialize_with = "required")]
        fault: Option<String>,
    },
}

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        let i = match self {
            WireMessage::Hello { .. } => 0,
            WireMessage::LeaderJointTarget { .. } => 1,
            WireMessage::FollowerState { .. } => 2,
            WireMessage::Realign { .. } => 3,
            WireMessage::Heartbeat { .. } => 4,
            WireMessage::Error { .. } => 5,
            WireMessage::ControllerInput { .. } => 6,
            WireMessage::LeaderStatus { .. } => 7,
        };
        MESSAGE_TYPES[i]
    }

    /// Name of the first float field holding NaN or ±∞.
    fn non_finite_field(&self) -> Option<&'static str> {
        let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
        let bad_poses = |p: &[WirePose]| {
            p.iter()
                .any(|p| bad(&p.position) || bad(&p.orientation))
        };
        match self {
            WireMessage::LeaderJointTarget { q, .. } if bad(q) => Some("q"),
            WireMessage::FollowerState { q, .. } if bad(q) => Some("q"),
            WireMessage::FollowerState { q_dot, .. } if bad(q_dot) => Some("q_dot"),
            WireMessage::FollowerState { link_poses, .. } if bad_poses(link_poses) => {
                Some("link_poses")
            }
            WireMessage::ControllerInput { pose, .. } if bad_poses(&[*pose]) => Some("pose"),
            WireMessage::LeaderStatus { q, .. } if bad(q) => Some("q"),
            WireMessage::LeaderStatus { link_poses, .. } if bad_poses(link_poses) => {
                Some("link_poses")
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("non-finite value in field `{0}`")]
    NonFinite(&'static str),
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("frame length: declared {declared} bytes, got {actual}")]
    FrameLength { declared: usize, actual: usize },
    #[error("bad JSON: {0}")]
    BadJson(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

/// JSON payload without the length prefix.
pub fn encode_payload(msg: &WireMessage) -> Result<Vec<u8>, EncodeError> {
    if let Some(field) = msg.non_finite_field() {
        return Err(EncodeError::NonFinite(field));
    }
    let payload = serde_json::to_vec(msg).expect("wire messages always serialise");
    if payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::TooLarge(payload.len()));
    }
    Ok(payload)
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, EncodeError> {
    let payload = encode_payload(msg)?;
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decodes one complete frame. With `dof` set, joint vectors and link pose
/// lists must match the handshaked model.
pub fn decode(frame: &[u8], dof: Option<usize>) -> Result<WireMessage, DecodeError> {
    if frame.len() < 4 {
        return Err(DecodeError::FrameLength {
            declared: 0,
            actual: frame.len(),
        });
    }
    let declared = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
    let actual = frame.len() - 4;
    if declared != actual {
        return Err(DecodeError::FrameLength { declared, actual });
    }
    decode_payload(&frame[4..], dof)
}

pub fn decode_payload(payload: &[u8], dof: Option<usize>) -> Result<WireMessage, DecodeError> {
    let value: serde_json::Value =
        serde_json::from_slice(payload).map_err(|e| DecodeError::BadJson(e.to_string()))?;
    let ty = match value.get("type") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(_) => return Err(DecodeError::SchemaViolation("`type` must be a string".into())),
        None if value.is_object() => {
            return Err(DecodeError::SchemaViolation("missing field `type`".into()))
        }
        None => return Err(DecodeError::SchemaViolation("payload must be an object".into())),
    };
    if !MESSAGE_TYPES.contains(&ty.as_str()) {
        return Err(DecodeError::UnknownType(ty));
    }
    let msg: WireMessage = serde_json::from_value(value)
        .map_err(|e| DecodeError::SchemaViolation(format!("{ty}: {e}")))?;
    validate(&msg, dof)?;
    Ok(msg)
}

fn validate(msg: &WireMessage, dof: Option<usize>) -> Result<(), DecodeError> {
    let ty = msg.type_name();
    let check_len = |field: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(DecodeError::SchemaViolation(format!(
                "{ty}.{field} has {got} entries, expected {want}"
            )))
        }
    };
    let check_poses = |poses: &[WirePose]| {
        for (i, p) in poses.iter().enumerate() {
            let n = p.quaternion_norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(DecodeError::SchemaViolation(format!(
                    "{ty}.link_poses[{i}].orientation has norm {n}"
                )));
            }
        }
        Ok(())
    };
    match msg {
        WireMessage::LeaderJointTarget { q, .. } => {
            if let Some(n) = dof {
                check_len("q", q.len(), n)?;
            }
        }
        WireMessage::FollowerState {
            q,
            q_dot,
            link_poses,
            ..
        } => {
            check_len("q_dot", q_dot.len(), q.len())?;
            check_len("link_poses", link_poses.len(), q.len() + 1)?;
            if let Some(n) = dof {
                check_len("q", q.len(), n)?;
            }
            check_poses(link_poses)?;
        }
        WireMessage::LeaderStatus { q, link_poses, .. } => {
            check_len("link_poses", link_poses.len(), q.len() + 1)?;
            if let Some(n) = dof {
                check_len("q", q.len(), n)?;
            }
            check_poses(link_poses)?;
        }
        WireMessage::ControllerInput { pose, .. } => {
            let n = pose.quaternion_norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(DecodeError::SchemaViolation(format!(
                    "controller_input.pose.orientation has norm {n}"
                )));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Reassembles frames from an arbitrary chunking of a byte stream.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        FrameBuffer::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame (prefix included), if one is buffered. An
    /// oversized length prefix is an error; the stream cannot be resynced.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, DecodeError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(self.buf[..4].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(DecodeError::FrameLength {
                declared: len,
                actual: self.buf.len() - 4,
            });
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let frame: Vec<u8> = self.buf.drain(..4 + len).collect();
        Ok(Some(frame))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
