//! Frame codec: round trips, stream reassembly and schema enforcement.

use proptest::prelude::*;
use puppet::wire::{
    decode, decode_payload, encode, encode_payload, DecodeError, EncodeError, FrameBuffer,
    Gripper, WireMessage, WirePose, MESSAGE_TYPES,
};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE), Just(1e300)]
}

fn pose() -> impl Strategy<Value = WirePose> {
    (
        prop::array::uniform3(finite()),
        prop::array::uniform4(-1.0f64..1.0),
    )
        .prop_filter_map("degenerate quaternion", |(position, q)| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            (n > 1e-3).then(|| WirePose {
                position,
                orientation: q.map(|v| v / n),
            })
        })
}

fn message() -> impl Strategy<Value = WireMessage> {
    let name = "[a-zA-Z0-9_ \"\\\\é✓-]{0,12}";
    prop_oneof![
        (any::<u32>(), name).prop_map(|(version, model_name)| WireMessage::Hello {
            version,
            model_name
        }),
        (any::<u64>(), any::<u64>(), prop::collection::vec(finite(), 7), any::<bool>()).prop_map(
            |(seq, t_mono_ns, q, close)| WireMessage::LeaderJointTarget {
                seq,
                t_mono_ns,
                q,
                gripper: if close { Gripper::Close } else { Gripper::Open },
            }
        ),
        (
            any::<u64>(),
            any::<u64>(),
            prop::collection::vec(finite(), 7),
            prop::collection::vec(finite(), 7),
            prop::collection::vec(pose(), 8)
        )
            .prop_map(|(seq, t_mono_ns, q, q_dot, link_poses)| {
                WireMessage::FollowerState {
                    seq,
                    t_mono_ns,
                    q,
                    q_dot,
                    link_poses,
                }
            }),
        any::<u64>().prop_map(|seq| WireMessage::Realign { seq }),
        any::<u64>().prop_map(|seq| WireMessage::Heartbeat { seq }),
        (any::<u32>(), name).prop_map(|(code, text)| WireMessage::Error { code, text }),
        (any::<u64>(), any::<u64>(), pose(), any::<bool>(), any::<bool>()).prop_map(
            |(seq, t_mono_ns, pose, pressed, trigger)| WireMessage::ControllerInput {
                seq,
                t_mono_ns,
                pose,
                pressed,
                trigger,
            }
        ),
        (
            any::<u64>(),
            prop::collection::vec(finite(), 7),
            prop::collection::vec(pose(), 8),
            prop::option::of(name),
            prop::option::of(name)
        )
            .prop_map(|(seq, q, link_poses, lock_cause, fault)| {
                WireMessage::LeaderStatus {
                    seq,
                    t_mono_ns: seq / 3,
                    q,
                    link_poses,
                    grasp: "white".into(),
                    overlay: "green".into(),
                    gate: "streaming".into(),
                    lock_cause,
                    fault,
                }
            }),
    ]
}

proptest! {
    #[test]
    fn decode_inverts_encode(msg in message()) {
        let frame = encode(&msg).unwrap();
        let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
        prop_assert_eq!(len, frame.len() - 4);
        prop_assert_eq!(decode(&frame, Some(7)).unwrap(), msg.clone());
        // bit-exact floats, signed zero included
        prop_assert_eq!(encode(&decode(&frame, None).unwrap()).unwrap(), frame);
    }

    #[test]
    fn any_chunking_reassembles(
        msgs in prop::collection::vec(message(), 1..6),
        cuts in prop::collection::vec(0usize..10_000, 0..20),
    ) {
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c % (stream.len() + 1)).collect();
        cuts.push(0);
        cuts.push(stream.len());
        cuts.sort_unstable();
        let mut fb = FrameBuffer::new();
        let mut out = Vec::new();
        for w in cuts.windows(2) {
            fb.push(&stream[w[0]..w[1]]);
            while let Some(f) = fb.next_frame().unwrap() {
                out.push(decode(&f, Some(7)).unwrap());
            }
        }
        prop_assert_eq!(out, msgs);
        prop_assert_eq!(fb.buffered(), 0);
    }

    #[test]
    fn non_finite_never_encodes(j in 0usize..7, bad in prop_oneof![Just(f64::NAN), Just(f64::INFINITY), Just(f64::NEG_INFINITY)]) {
        let mut q = vec![0.0; 7];
        q[j] = bad;
        let msg = WireMessage::LeaderJointTarget { seq: 0, t_mono_ns: 0, q, gripper: Gripper::Open };
        prop_assert_eq!(encode(&msg), Err(EncodeError::NonFinite("q")));
    }
}

#[test]
fn type_tags_are_snake_case() {
    let samples = [
        WireMessage::Hello { version: 1, model_name: "panda".into() },
        WireMessage::LeaderJointTarget { seq: 0, t_mono_ns: 0, q: vec![], gripper: Gripper::Open },
        WireMessage::FollowerState {
            seq: 0,
            t_mono_ns: 0,
            q: vec![],
            q_dot: vec![],
            link_poses: vec![WirePose { position: [0.0; 3], orientation: [1.0, 0.0, 0.0, 0.0] }],
        },
        WireMessage::Realign { seq: 0 },
        WireMessage::Heartbeat { seq: 0 },
        WireMessage::Error { code: 3, text: String::new() },
        WireMessage::ControllerInput {
            seq: 0,
            t_mono_ns: 0,
            pose: WirePose { position: [0.0; 3], orientation: [1.0, 0.0, 0.0, 0.0] },
            pressed: false,
            trigger: false,
        },
        WireMessage::LeaderStatus {
            seq: 0,
            t_mono_ns: 0,
            q: vec![],
            link_poses: vec![WirePose { position: [0.0; 3], orientation: [1.0, 0.0, 0.0, 0.0] }],
            grasp: "white".into(),
            overlay: "green".into(),
            gate: "streaming".into(),
            lock_cause: None,
            fault: None,
        },
    ];
    for (m, name) in samples.iter().zip(MESSAGE_TYPES) {
        let v: serde_json::Value = serde_json::from_slice(&encode_payload(m).unwrap()).unwrap();
        assert_eq!(v["type"], name);
        assert_eq!(m.type_name(), name);
    }
}

#[test]
fn target_payload_shape() {
    let m = WireMessage::LeaderJointTarget {
        seq: 3,
        t_mono_ns: 60_000_000,
        q: vec![0.5, -1.0],
        gripper: Gripper::Close,
    };
    assert_eq!(
        String::from_utf8(encode_payload(&m).unwrap()).unwrap(),
        r#"{"type":"leader_joint_target","seq":3,"t_mono_ns":60000000,"q":[0.5,-1.0],"gripper":"close"}"#
    );
}

fn target_json(q: &str) -> String {
    format!(r#"{{"type":"leader_joint_target","seq":1,"t_mono_ns":2,"q":{q},"gripper":"open"}}"#)
}

#[test]
fn extra_fields_are_ignored() {
    let src = r#"{"type":"heartbeat","seq":4,"sender":"follower","extra":{"a":[1,2]}}"#;
    assert_eq!(
        decode_payload(src.as_bytes(), None).unwrap(),
        WireMessage::Heartbeat { seq: 4 }
    );
}

#[test]
fn wrong_joint_count_is_a_schema_violation() {
    let six = target_json("[0,0,0,0,0,0]");
    let err = decode_payload(six.as_bytes(), Some(7)).unwrap_err();
    assert!(matches!(&err, DecodeError::SchemaViolation(m) if m.contains("6 entries")), "{err}");
    // without a model to check against the length is accepted
    assert!(decode_payload(six.as_bytes(), None).is_ok());
}

#[test]
fn follower_state_lengths_are_cross_checked() {
    let pose = r#"{"position":[0,0,0],"orientation":[1,0,0,0]}"#;
    let poses = |n: usize| format!("[{}]", vec![pose; n].join(","));
    let msg = |q_dot: &str, n: usize| {
        format!(
            r#"{{"type":"follower_state","seq":0,"t_mono_ns":0,"q":[0,0],"q_dot":{q_dot},"link_poses":{}}}"#,
            poses(n)
        )
    };
    assert!(decode_payload(msg("[0,0]", 3).as_bytes(), Some(2)).is_ok());
    assert!(matches!(
        decode_payload(msg("[0]", 3).as_bytes(), Some(2)),
        Err(DecodeError::SchemaViolation(_))
    ));
    assert!(matches!(
        decode_payload(msg("[0,0]", 2).as_bytes(), Some(2)),
        Err(DecodeError::SchemaViolation(_))
    ));
    let skewed = msg("[0,0]", 3).replacen("[1,0,0,0]", "[1,0,0,0.1]", 1);
    assert!(matches!(
        decode_payload(skewed.as_bytes(), Some(2)),
        Err(DecodeError::SchemaViolation(m)) if m.contains("norm")
    ));
}

#[test]
fn malformed_payloads() {
    let cases: [(&str, fn(&DecodeError) -> bool); 8] = [
        (r#"{"type":"teleport","seq":1}"#, |e| matches!(e, DecodeError::UnknownType(t) if t == "teleport")),
        (r#"{"seq":1}"#, |e| matches!(e, DecodeError::SchemaViolation(_))),
        (r#"[1,2]"#, |e| matches!(e, DecodeError::SchemaViolation(_))),
        (r#"{"type":7}"#, |e| matches!(e, DecodeError::SchemaViolation(_))),
        (r#"{"type":"heartbeat"}"#, |e| matches!(e, DecodeError::SchemaViolation(m) if m.contains("seq"))),
        (r#"{"type":"heartbeat","seq":-1}"#, |e| matches!(e, DecodeError::SchemaViolation(_))),
        (r#"{"type":"heartbeat","seq":1"#, |e| matches!(e, DecodeError::BadJson(_))),
        (
            r#"{"type":"leader_status","seq":0,"t_mono_ns":0,"q":[],"link_poses":[{"position":[0,0,0],"orientation":[1,0,0,0]}],"grasp":"white","overlay":"green","gate":"streaming","fault":null}"#,
            |e| matches!(e, DecodeError::SchemaViolation(m) if m.contains("lock_cause")),
        ),
    ];
    for (src, ok) in cases {
        let err = decode_payload(src.as_bytes(), Some(7)).unwrap_err();
        assert!(ok(&err), "{src} -> {err:?}");
    }
    let gripper = target_json("[0,0,0,0,0,0,0]").replace("open", "half");
    assert!(matches!(
        decode_payload(gripper.as_bytes(), Some(7)),
        Err(DecodeError::SchemaViolation(_))
    ));
}

#[test]
fn declared_length_must_match() {
    let mut frame = encode(&WireMessage::Heartbeat { seq: 9 }).unwrap();
    let declared = r#"{"type":"heartbeat","seq":9}"#.len();
    frame.push(b' ');
    assert_eq!(
        decode(&frame, None),
        Err(DecodeError::FrameLength { declared, actual: declared + 1 })
    );
    assert!(matches!(decode(&frame[..3], None), Err(DecodeError::FrameLength { .. })));
    assert!(matches!(decode(&frame[..10], None), Err(DecodeError::FrameLength { .. })));
}

#[test]
fn oversized_prefix_is_rejected_by_the_stream() {
    let mut fb = FrameBuffer::new();
    fb.push(&u32::MAX.to_le_bytes());
    assert!(matches!(fb.next_frame(), Err(DecodeError::FrameLength { .. })));
}
