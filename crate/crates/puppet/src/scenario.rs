//! Scenario files: operator script, fault injections and run parameters.

use std::path::{Path, PathBuf};

use nalgebra::{Unit, Vector3};
use puppet_core::kinematics::forward_kinematics;
use puppet_core::{JointConfig, Pose, RobotModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonpos::LineIndex;
use crate::model_file::{bare_message, load_model, ModelFileError, BUILTIN_PANDA};
use crate::wire::WirePose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub controller: WirePose,
    pub pressed: bool,
    #[serde(default)]
    pub trigger: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Operator {
    /// Never touches the grasp sphere.
    Null {},
    /// Piecewise interpolation between waypoints; buttons hold their value
    /// until the next waypoint.
    Scripted { waypoints: Vec<Waypoint> },
    /// Grasps at the initial end-effector pose and oscillates it along
    /// `axis` with `amplitude` m.
    Sinusoid {
        axis: [f64; 3],
        amplitude: f64,
        period: f64,
    },
    /// Grasps and moves the controller along `FK(q0 + A·sin(2πt/T)·e_joint)`.
    JointSinusoid {
        joint: usize,
        amplitude: f64,
        period: f64,
    },
    /// Driven live from the console; only valid for `puppet serve`.
    External {},
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    FreezeFollower,
    DropLink,
    TeleportLeader,
    Realign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    pub t: f64,
    pub kind: FaultKind,
    /// Freeze/drop length in s; absent means until the end of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// Teleport offset in rad.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dq: Option<f64>,
    /// Teleported joint; absent means every joint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FollowerParams {
    pub alpha: f64,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

impl Default for FollowerParams {
    fn default() -> Self {
        FollowerParams {
            alpha: puppet_core::follower::DEFAULT_ALPHA,
            kp: vec![600.0, 600.0, 600.0, 250.0, 150.0, 50.0, 1.0],
            kd: vec![50.0, 50.0, 20.0, 20.0, 20.0, 10.0, 1.0],
        }
    }
}

fn default_model() -> String {
    BUILTIN_PANDA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Path relative to the scenario file, or `builtin:panda`.
    #[serde(default = "default_model")]
    pub model_file: String,
    pub operator: Operator,
    pub duration: f64,
    #[serde(default)]
    pub fault_injections: Vec<FaultInjection>,
    #[serde(default)]
    pub seed: u64,
    /// Initial configuration of both arms; the model's home pose if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_q: Option<Vec<f64>>,
    /// Std-dev of Gaussian noise added to each controller position sample, m.
    #[serde(default)]
    pub operator_noise: f64,
    #[serde(default)]
    pub follower: FollowerParams,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {msg}")]
    Syntax {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("line {line}: `{path}`: {msg}")]
    Invalid {
        line: usize,
        path: String,
        msg: String,
    },
    #[error("model `{file}`: {source}")]
    Model {
        file: String,
        source: ModelFileError,
    },
}

/// A validation failure located by JSON path.
pub type Violation = (String, String);

fn bad(path: impl Into<String>, msg: impl Into<String>) -> Violation {
    (path.into(), msg.into())
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Scenario {
    /// Default home configuration for the Panda, zeros otherwise.
    pub fn initial_config(&self, model: &RobotModel) -> JointConfig {
        match &self.initial_q {
            Some(q) => JointConfig::from(q.as_slice()),
            None if model.dof() == 7 => RobotModel::panda_home(),
            None => JointConfig::zeros(model.dof()),
        }
    }

    pub fn check(&self, model: &RobotModel) -> Result<(), Violation> {
        let n = model.dof();
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(bad("duration", format!("must be > 0, got {}", self.duration)));
        }
        if !(self.operator_noise.is_finite() && self.operator_noise >= 0.0) {
            return Err(bad("operator_noise", "must be >= 0"));
        }
        if let Some(q) = &self.initial_q {
            if q.len() != n {
                return Err(bad("initial_q", format!("has {} entries, model has {n} joints", q.len())));
            }
            if !finite(q) || !model.within_limits(q) {
                return Err(bad("initial_q", "must be finite and within joint limits"));
            }
        }
        let f = &self.follower;
        if !(f.alpha > 0.0 && f.alpha <= 1.0) {
            return Err(bad("follower.alpha", format!("must be in (0, 1], got {}", f.alpha)));
        }
        for (name, g) in [("kp", &f.kp), ("kd", &f.kd)] {
            if g.len() != n {
                return Err(bad(format!("follower.{name}"), format!("has {} entries, model has {n} joints", g.len())));
            }
            if let Some(i) = g.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(bad(format!("follower.{name}[{i}]"), "gains must be > 0"));
            }
        }
        self.check_operator(model)?;
        for (i, fi) in self.fault_injections.iter().enumerate() {
            let at = |field: &str| format!("fault_injections[{i}].{field}");
            if !(fi.t.is_finite() && fi.t >= 0.0 && fi.t <= self.duration) {
                return Err(bad(at("t"), format!("must lie in [0, duration], got {}", fi.t)));
            }
            if let Some(d) = fi.duration {
                if !(d.is_finite() && d > 0.0) {
                    return Err(bad(at("duration"), "must be > 0"));
                }
                if !matches!(fi.kind, FaultKind::FreezeFollower | FaultKind::DropLink) {
                    return Err(bad(at("duration"), "only freeze_follower and drop_link take a duration"));
                }
            }
            match fi.kind {
                FaultKind::TeleportLeader => match fi.dq {
                    Some(dq) if dq.is_finite() => {}
                    Some(_) => return Err(bad(at("dq"), "must be finite")),
                    None => return Err(bad(at("kind"), "teleport_leader requires `dq`")),
                },
                _ if fi.dq.is_some() => return Err(bad(at("dq"), "only teleport_leader takes `dq`")),
                _ => {}
            }
            if let Some(j) = fi.joint {
                if fi.kind != FaultKind::TeleportLeader {
                    return Err(bad(at("joint"), "only teleport_leader takes `joint`"));
                }
                if j >= n {
                    return Err(bad(at("joint"), format!("joint {j} out of range for {n} joints")));
                }
            }
        }
        Ok(())
    }

    fn check_operator(&self, model: &RobotModel) -> Result<(), Violation> {
        let period_ok = |p: f64| p.is_finite() && p > 0.0;
        match &self.operator {
            Operator::Null {} | Operator::External {} => {}
            Operator::Scripted { waypoints } => {
                if waypoints.is_empty() {
                    return Err(bad("operator.waypoints", "needs at least one waypoint"));
                }
                let mut prev = f64::NEG_INFINITY;
                for (i, w) in waypoints.iter().enumerate() {
                    let at = |field: &str| format!("operator.waypoints[{i}].{field}");
                    if !(w.t.is_finite() && w.t >= 0.0) {
                        return Err(bad(at("t"), "must be finite and >= 0"));
                    }
                    if w.t <= prev {
                        return Err(bad(at("t"), format!("waypoint times must strictly increase ({} after {prev})", w.t)));
                    }
                    prev = w.t;
                    if !finite(&w.controller.position) || !finite(&w.controller.orientation) {
                        return Err(bad(at("controller"), "non-finite pose"));
                    }
                    let norm = w.controller.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-6 {
                        return Err(bad(at("controller.orientation"), format!("quaternion norm {norm}, expected 1")));
                    }
                }
            }
            Operator::Sinusoid {
                axis,
                amplitude,
                period,
            } => {
                if !finite(axis) || Vector3::from(*axis).norm() < 1e-12 {
                    return Err(bad("operator.axis", "must be a finite non-zero vector"));
                }
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(bad("operator.amplitude", "must be >= 0"));
                }
                if !period_ok(*period) {
                    return Err(bad("operator.period", "must be > 0"));
                }
            }
            Operator::JointSinusoid {
                joint,
                amplitude,
                period,
            } => {
                if *joint >= model.dof() {
                    return Err(bad("operator.joint", format!("joint {joint} out of range for {} joints", model.dof())));
                }
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(bad("operator.amplitude", "must be >= 0"));
                }
                if !period_ok(*period) {
                    return Err(bad("operator.period", "must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a scenario, resolving its model relative to
/// `base_dir`.
pub fn parse_scenario(src: &str, base_dir: &Path) -> Result<(Scenario, RobotModel), ScenarioError> {
    let s: Scenario = serde_json::from_str(src).map_err(|e| ScenarioError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: bare_message(&e),
    })?;
    let model_path = if s.model_file == BUILTIN_PANDA {
        PathBuf::from(BUILTIN_PANDA)
    } else {
        base_dir.join(&s.model_file)
    };
    let model = load_model(&model_path).map_err(|source| ScenarioError::Model {
        file: s.model_file.clone(),
        source,
    })?;
    s.check(&model).map_err(|(path, msg)| ScenarioError::Invalid {
        line: LineIndex::new(src).line_of(&path),
        path,
        msg,
    })?;
    Ok((s, model))
}

pub fn load_scenario(path: &Path) -> Result<(Scenario, RobotModel), ScenarioError> {
    let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&src, path.parent().unwrap_or(Path::new(".")))
}

/// One operator controller sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSample {
    pub pose: Pose,
    pub pressed: bool,
    pub trigger: bool,
}

/// Samples the scripted operator at command times.
pub struct OperatorSource {
    operator: Operator,
    home: Pose,
    q0: JointConfig,
    model: RobotModel,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl OperatorSource {
    pub fn new(scenario: &Scenario, model: &RobotModel) -> Self {
        let q0 = scenario.initial_config(model);
        let noise = (scenario.operator_noise > 0.0).then(|| {
            (
                Normal::new(0.0, scenario.operator_noise).expect("validated std-dev"),
                ChaCha8Rng::seed_from_u64(scenario.seed),
            )
        });
        OperatorSource {
            operator: scenario.operator.clone(),
            home: forward_kinematics(model, &q0).expect("validated initial configuration"),
            q0,
            model: model.clone(),
            noise,
        }
    }

    /// Controller sample at `t` seconds; `None` when no operator is present.
    pub fn sample(&mut self, t: f64) -> Option<ControllerSample> {
        let mut s = match &self.operator {
            Operator::Null {} | Operator::External {} => return None,
            Operator::Scripted { waypoints } => scripted(waypoints, t),
            Operator::Sinusoid {
                axis,
                amplitude,
                period,
            } => {
                let dir = Unit::new_normalize(Vector3::from(*axis));
                let offset = dir.into_inner() * (*amplitude) * (2.0 * std::f64::consts::PI * t / period).sin();
                ControllerSample {
                    pose: Pose::new(self.home.position + offset, self.home.orientation),
                    pressed: true,
                    trigger: false,
                }
            }
            Operator::JointSinusoid {
                joint,
                amplitude,
                period,
            } => {
                let mut q = self.q0.clone();
                q[*joint] += amplitude * (2.0 * std::f64::consts::PI * t / period).sin();
                ControllerSample {
                    pose: forward_kinematics(&self.model, &q).expect("validated joint count"),
                    pressed: true,
                    trigger: false,
                }
            }
        };
        if let Some((dist, rng)) = &mut self.noise {
            for i in 0..3 {
                s.pose.position[i] += dist.sample(rng);
            }
        }
        Some(s)
    }
}

fn scripted(waypoints: &[Waypoint], t: f64) -> ControllerSample {
    let i = waypoints.partition_point(|w| w.t <= t);
    let at = |w: &Waypoint| ControllerSample {
        pose: w.controller.to_pose(),
        pressed: w.pressed,
        trigger: w.trigger,
    };
    if i == 0 {
        return at(&waypoints[0]);
    }
    if i == waypoints.len() {
        return at(&waypoints[i - 1]);
    }
    let (a, b) = (&waypoints[i - 1], &waypoints[i]);
    let s = (t - a.t) / (b.t - a.t);
    let (pa, pb) = (a.controller.to_pose(), b.controller.to_pose());
    ControllerSample {
        pose: Pose::new(
            pa.position.lerp(&pb.position, s),
            pa.orientation.slerp(&pb.orientation, s),
        ),
        pressed: a.pressed,
        trigger: a.trigger,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(t: f64, x: f64, pressed: bool) -> Waypoint {
        Waypoint {
            t,
            controller: WirePose {
                position: [x, 0.0, 0.0],
                orientation: [1.0, 0.0, 0.0, 0.0],
            },
            pressed,
            trigger: false,
        }
    }

    #[test]
    fn scripted_interpolates_and_holds_buttons() {
        let w = [wp(1.0, 0.0, false), wp(2.0, 1.0, true)];
        assert_eq!(scripted(&w, 0.0).pose.position.x, 0.0);
        let mid = scripted(&w, 1.5);
        assert!((mid.pose.position.x - 0.5).abs() < 1e-15);
        assert!(!mid.pressed);
        let end = scripted(&w, 3.0);
        assert_eq!(end.pose.position.x, 1.0);
        assert!(end.pressed);
    }

    #[test]
    fn rejects_unknown_operator_fields() {
        let src = r#"{"name":"x","operator":{"kind":"null","bogus":1},"duration":1}"#;
        assert!(matches!(
            parse_scenario(src, Path::new(".")),
            Err(ScenarioError::Syntax { .. })
        ));
    }

    #[test]
    fn decreasing_waypoints_point_at_the_offender() {
        let src = r#"{
  "name": "x",
  "operator": {"kind": "scripted", "waypoints": [
    {"t": 0.5, "controller": {"position": [0,0,0], "orientation": [1,0,0,0]}, "pressed": false},
    {"t": 0.25, "controller": {"position": [0,0,0], "orientation": [1,0,0,0]}, "pressed": false}
  ]},
  "duration": 1
}"#;
        match parse_scenario(src, Path::new(".")) {
            Err(ScenarioError::Invalid { line, path, .. }) => {
                assert_eq!(path, "operator.waypoints[1].t");
                assert_eq!(line, 5);
            }
            other => panic!("{other:?}"),
        }
    }
}
