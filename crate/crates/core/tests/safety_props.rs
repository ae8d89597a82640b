//! Gate invariants over random event schedules.

use proptest::prelude::*;
use puppet_core::clock::NANOS_PER_MS;
use puppet_core::leader::LeaderState;
use puppet_core::safety::{divergence_check, Divergence, GateEventKind, GateMode};
use puppet_core::{GateState, JointConfig, Overlay, Verdict};

#[derive(Debug, Clone)]
enum Step {
    /// Leader joint offset relative to the follower.
    Gate { joint: usize, delta: f64 },
    Heartbeat,
    Silence { ms: u64 },
    Realign,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        4 => (0usize..7, -0.4f64..0.4).prop_map(|(joint, delta)| Step::Gate { joint, delta }),
        3 => Just(Step::Heartbeat),
        1 => (0u64..400).prop_map(|ms| Step::Silence { ms }),
        1 => Just(Step::Realign),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn locked_gate_never_forwards(steps in proptest::collection::vec(step(), 1..80)) {
        let mut gate = GateState::new(0);
        let mut now = 0u64;
        let q_f = JointConfig::zeros(7);
        let mut leader = LeaderState::at_rest(JointConfig::zeros(7));
        let mut locked = false;
        for s in steps {
            now += 20 * NANOS_PER_MS;
            match s {
                Step::Gate { joint, delta } => {
                    let mut q_l = q_f.clone();
                    q_l[joint] = delta;
                    let was_locked = gate.is_locked();
                    let (v, ev) = gate.gate(&q_l, &q_f, now);
                    if was_locked {
                        prop_assert_eq!(v, Verdict::Blocked);
                        prop_assert!(ev.is_none());
                    }
                    if let Some(ev) = &ev {
                        prop_assert_eq!(ev.kind, GateEventKind::Lock);
                        prop_assert!(ev.cause.is_some());
                        prop_assert_eq!(ev.t, now);
                        locked = true;
                    }
                    if v == Verdict::Forward {
                        prop_assert!(!locked);
                        prop_assert!(delta.abs() <= 0.2);
                    }
                }
                Step::Heartbeat => gate.heartbeat(now),
                Step::Silence { ms } => now += ms * NANOS_PER_MS,
                Step::Realign => {
                    let ev = gate.realign(&mut leader, &q_f, now);
                    prop_assert_eq!(ev.last().unwrap().kind == GateEventKind::Unlock, locked);
                    locked = false;
                    prop_assert_eq!(divergence_check(&leader.q, &q_f, 0.2), Divergence::Aligned);
                }
            }
            prop_assert_eq!(gate.is_locked(), locked);
            let overlay = if locked { Overlay::Red } else { Overlay::Green };
            prop_assert_eq!(gate.overlay(), overlay);
            prop_assert_eq!(matches!(gate.mode(), GateMode::Streaming), !locked);
        }
    }

    #[test]
    fn realign_always_aligns(
        q_l in proptest::collection::vec(-3.0f64..3.0, 7),
        q_f in proptest::collection::vec(-3.0f64..3.0, 7),
        locked in any::<bool>(),
    ) {
        let mut gate = GateState::new(0);
        if locked {
            gate.gate(&[1.0; 7], &[0.0; 7], 0);
        }
        let mut leader = LeaderState::at_rest(JointConfig::new(q_l));
        leader.q_dot = vec![0.5; 7];
        let q_f = JointConfig::new(q_f);
        gate.realign(&mut leader, &q_f, 1);
        prop_assert_eq!(&leader.q, &q_f);
        prop_assert!(leader.q_dot.iter().all(|v| *v == 0.0));
        prop_assert_eq!(gate.gate(&leader.q, &q_f, 1), (Verdict::Forward, None));
    }
}
