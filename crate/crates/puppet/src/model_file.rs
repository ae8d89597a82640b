//! Robot model config files.
//!
//! ```json
//! {"name": "...",
//!  "joints": [{"translation": [x,y,z], "rotation_rpy": [r,p,y],
//!              "axis": [x,y,z], "limits": [lo,hi], "vel_limit": v}],
//!  "ee_offset": {"translation": [x,y,z], "rotation_rpy": [r,p,y]}}
//! ```
//!
//! `rotation_rpy` is fixed-axis roll, pitch, yaw (rad): `R = Rz(y)·Ry(p)·Rx(r)`.

use std::path::Path;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use puppet_core::model::JointSpec;
use puppet_core::RobotModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonpos::LineIndex;

/// Model reference that resolves to [`RobotModel::panda`] without a file.
pub const BUILTIN_PANDA: &str = "builtin:panda";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformDoc {
    pub translation: [f64; 3],
    pub rotation_rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub translation: [f64; 3],
    pub rotation_rpy: [f64; 3],
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    pub vel_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub name: String,
    pub joints: Vec<JointDoc>,
    pub ee_offset: TransformDoc,
}

#[derive(Debug, Error)]
pub enum ModelFileError {
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
}

impl ModelFileError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ModelFileError::Io { .. } => None,
            ModelFileError::Syntax { line, .. } | ModelFileError::Invalid { line, .. } => {
                Some(*line)
            }
        }
    }
}

/// serde_json's message without its trailing position.
pub(crate) fn bare_message(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

fn isometry(translation: &[f64; 3], rpy: &[f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(translation[0], translation[1], translation[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

impl TransformDoc {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        isometry(&self.translation, &self.rotation_rpy)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let (r, p, y) = iso.rotation.euler_angles();
        let t = iso.translation.vector;
        TransformDoc {
            translation: [t.x, t.y, t.z],
            rotation_rpy: [r, p, y],
        }
    }
}

impl ModelDoc {
    pub fn from_model(model: &RobotModel) -> Self {
        ModelDoc {
            name: model.name().to_string(),
            joints: model
                .joints()
                .iter()
                .map(|j| {
                    let t = TransformDoc::from_isometry(&j.origin);
                    JointDoc {
                        translation: t.translation,
                        rotation_rpy: t.rotation_rpy,
                        axis: [j.axis.x, j.axis.y, j.axis.z],
                        limits: [j.lower, j.upper],
                        vel_limit: j.vel_limit,
                    }
                })
                .collect(),
            ee_offset: TransformDoc::from_isometry(model.ee_offset()),
        }
    }

    /// Checks every model invariant, reporting the offending value's path.
    fn check(&self) -> Result<(), (String, String)> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if self.joints.is_empty() {
            return Err(("joints".into(), "model must have at least one joint".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            let at = |f: &str| format!("joints[{i}].{f}");
            for (field, v) in [
                ("translation", &j.translation[..]),
                ("rotation_rpy", &j.rotation_rpy[..]),
                ("axis", &j.axis[..]),
                ("limits", &j.limits[..]),
                ("vel_limit", &[j.vel_limit][..]),
            ] {
                if !finite(v) {
                    return Err((at(field), "non-finite value".into()));
                }
            }
            let norm = Vector3::from(j.axis).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err((at("axis"), format!("axis norm is {norm}, expected 1 (±1e-9)")));
            }
            if j.limits[0] >= j.limits[1] {
                return Err((
                    at("limits"),
                    format!("lower limit {} is not below upper limit {}", j.limits[0], j.limits[1]),
                ));
            }
            if j.vel_limit <= 0.0 {
                return Err((at("vel_limit"), format!("velocity limit {} must be > 0", j.vel_limit)));
            }
        }
        if !finite(&self.ee_offset.translation) {
            return Err(("ee_offset.translation".into(), "non-finite value".into()));
        }
        if !finite(&self.ee_offset.rotation_rpy) {
            return Err(("ee_offset.rotation_rpy".into(), "non-finite value".into()));
        }
        Ok(())
    }

    pub fn to_model(&self) -> Result<RobotModel, (String, String)> {
        self.check()?;
        let joints = self
            .joints
            .iter()
            .map(|j| JointSpec {
                origin: isometry(&j.translation, &j.rotation_rpy),
                axis: Vector3::from(j.axis),
                limits: j.limits,
                vel_limit: j.vel_limit,
            })
            .collect();
        RobotModel::new(self.name.clone(), joints, self.ee_offset.to_isometry())
            .map_err(|e| (String::new(), e.to_string()))
    }
}

pub fn parse_model(src: &str) -> Result<RobotModel, ModelFileError> {
    let doc: ModelDoc = serde_json::from_str(src).map_err(|e| ModelFileError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: bare_message(&e),
    })?;
    doc.to_model().map_err(|(path, msg)| ModelFileError::Invalid {
        line: LineIndex::new(src).line_of(&path),
        path,
        msg,
    })
}

pub fn load_model(path: &Path) -> Result<RobotModel, ModelFileError> {
    if path.to_str() == Some(BUILTIN_PANDA) {
        return Ok(RobotModel::panda());
    }
    let src = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&src)
}

pub fn model_to_json(model: &RobotModel) -> String {
    serde_json::to_string_pretty(&ModelDoc::from_model(model)).expect("model serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_doc() {
        let m = RobotModel::panda();
        let back = parse_model(&model_to_json(&m)).unwrap();
        assert_eq!(back.dof(), 7);
        for (a, b) in m.joints().iter().zip(back.joints()) {
            assert!((a.origin.translation.vector - b.origin.translation.vector).norm() < 1e-15);
            assert!(a.origin.rotation.angle_to(&b.origin.rotation) < 1e-12);
        }
    }

    #[test]
    fn bad_axis_points_at_its_line() {
        let src = r#"{
  "name": "one",
  "joints": [
    {
      "translation": [0, 0, 0],
      "rotation_rpy": [0, 0, 0],
      "axis": [0, 0, 2],
      "limits": [-1, 1],
      "vel_limit": 1
    }
  ],
  "ee_offset": {"translation": [1, 0, 0], "rotation_rpy": [0, 0, 0]}
}"#;
        let err = parse_model(src).unwrap_err();
        assert_eq!(err.line(), Some(7), "{err}");
        assert!(err.to_string().contains("joints[0].axis"));
    }
}
