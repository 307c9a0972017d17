//! Declarative TOML model files (`format = "wbc-model"`, `version = 1`).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::model::{BaseType, BodySpec, JointKind, JointSpec, ModelBuilder, RobotModel};
use crate::error::{Error, Result};
use crate::math::rotation_from_euler_zyx;

pub const MODEL_FORMAT: &str = "wbc-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub base: String,
    #[serde(default)]
    pub gravity: Option<f64>,
    #[serde(default, rename = "body")]
    pub bodies: Vec<BodyEntry>,
    #[serde(default, rename = "frame")]
    pub frames: Vec<FrameEntry>,
    #[serde(default, rename = "loop")]
    pub loops: Vec<LoopEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BodyEntry {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    /// `[ixx, iyy, izz]` or `[ixx, iyy, izz, ixy, ixz, iyz]` about the center of mass.
    pub inertia: Vec<f64>,
    #[serde(default)]
    pub joint: Option<JointEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    #[serde(rename = "type")]
    pub kind: String,
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    #[serde(default = "default_true")]
    pub actuated: bool,
    #[serde(default)]
    pub limits: Option<[f64; 2]>,
    #[serde(default)]
    pub torque_limit: Option<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub name: String,
    pub body: String,
    #[serde(default)]
    pub offset: [f64; 3],
    /// Optional Z-Y-X Euler orientation `[yaw, pitch, roll]` relative to the body.
    #[serde(default)]
    pub euler_zyx: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LoopEntry {
    pub name: String,
    pub a: String,
    pub b: String,
    pub length: f64,
}

fn inertia_matrix(body: &str, v: &[f64]) -> Result<Matrix3<f64>> {
    match v {
        [xx, yy, zz] => Ok(Matrix3::from_diagonal(&Vector3::new(*xx, *yy, *zz))),
        [xx, yy, zz, xy, xz, yz] => Ok(Matrix3::new(*xx, *xy, *xz, *xy, *yy, *yz, *xz, *yz, *zz)),
        _ => Err(Error::ModelFormat(format!(
            "body `{body}`: inertia needs 3 or 6 entries, got {}",
            v.len()
        ))),
    }
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!(
                "expected format = \"{MODEL_FORMAT}\", found \"{}\"",
                file.format
            )));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model version {} (supported: {MODEL_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model file serializes")
    }

    pub fn build(&self) -> Result<RobotModel> {
        let mut b = ModelBuilder::new(&self.name, BaseType::parse(&self.base)?);
        if let Some(g) = self.gravity {
            b = b.gravity(g);
        }
        for body in &self.bodies {
            let joint = match &body.joint {
                None => None,
                Some(j) => {
                    let kind = match j.kind.as_str() {
                        "revolute" => JointKind::Revolute,
                        "prismatic" => JointKind::Prismatic,
                        other => {
                            return Err(Error::ModelFormat(format!(
                                "body `{}`: unknown joint type `{other}`",
                                body.name
                            )))
                        }
                    };
                    Some(JointSpec {
                        kind,
                        axis: Vector3::from(j.axis),
                        origin: Vector3::from(j.origin),
                        actuated: j.actuated,
                        limits: j.limits.map(|[lo, hi]| (lo, hi)),
                        torque_limit: j.torque_limit,
                    })
                }
            };
            b = b.body(BodySpec {
                name: body.name.clone(),
                parent: body.parent.clone(),
                joint,
                mass: body.mass,
                com: Vector3::from(body.com),
                inertia: inertia_matrix(&body.name, &body.inertia)?,
            });
        }
        for f in &self.frames {
            let rot = f
                .euler_zyx
                .map(|e| rotation_from_euler_zyx(&Vector3::from(e)))
                .unwrap_or_else(Matrix3::identity);
            b = b.frame_rotated(&f.name, &f.body, Vector3::from(f.offset), rot);
        }
        for l in &self.loops {
            b = b.loop_closure(&l.name, &l.a, &l.b, l.length);
        }
        b.build()
    }
}

pub fn load_model_str(text: &str) -> Result<RobotModel> {
    ModelFile::parse(text)?.build()
}

pub fn load_model_file(path: &std::path::Path) -> Result<RobotModel> {
    let text = std::fs::read_to_string(path)?;
    load_model_str(&text)
}

const BUILTIN_MODELS: &[(&str, &str)] = &[
    ("dpend", include_str!("../../../../models/dpend.toml")),
    ("cartpole", include_str!("../../../../models/cartpole.toml")),
    ("fourbar-arm", include_str!("../../../../models/fourbar-arm.toml")),
    ("biped5", include_str!("../../../../models/biped5.toml")),
];

pub fn builtin_model_names() -> Vec<&'static str> {
    BUILTIN_MODELS.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_model_source(name: &str) -> Option<&'static str> {
    BUILTIN_MODELS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin_model(name: &str) -> Result<RobotModel> {
    let src = builtin_model_source(name)
        .ok_or_else(|| Error::ModelFormat(format!("no built-in model named `{name}`")))?;
    load_model_str(src)
}
