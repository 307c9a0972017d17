//! Scenario files: schema, dotted-key overrides and resolution against a model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints::{ContactSpec, DEFAULT_ZMP_SHRINK, MIN_NORMAL_FORCE};
use crate::error::{Error, Result};
use crate::gait::{GaitFrames, GaitParams, GaitWeights, Side};
use crate::idqp::{ControllerOptions, Regularization};
use crate::multibody::{builtin_model, load_model_file, BaseType, FrameId, Kinematics, RobotModel};
use crate::qp::QpSettings;
use crate::safety::{BarrierKind, BarrierSpec, DEFAULT_POLES};
use crate::sim::{ExternalForce, Integrator, SimConfig, DEFAULT_BAUMGARTE, DEFAULT_DT};
use crate::tasks::{Reference, Signal, TaskKind, TaskSpec, DEFAULT_KD, DEFAULT_KP};

pub const SCENARIO_FORMAT: &str = "wbc-scenario";
pub const SCENARIO_VERSION: u32 = 1;

const BUILTIN: [(&str, &str); 5] = [
    ("squat", include_str!("../../../scenarios/squat.toml")),
    ("bow", include_str!("../../../scenarios/bow.toml")),
    ("fist-limit", include_str!("../../../scenarios/fist-limit.toml")),
    ("walk", include_str!("../../../scenarios/walk.toml")),
    ("walk-push", include_str!("../../../scenarios/walk-push.toml")),
];

pub fn builtin_scenario_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_scenario_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn default_rate() -> f64 {
    1000.0
}
fn default_true() -> bool {
    true
}
fn default_sign() -> f64 {
    1.0
}
fn default_poles() -> Vec<f64> {
    DEFAULT_POLES.to_vec()
}
fn default_kp() -> f64 {
    DEFAULT_KP
}
fn default_kd() -> f64 {
    DEFAULT_KD
}
fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format: String,
    pub version: u32,
    pub name: String,
    /// Built-in model name or a path relative to the scenario file.
    pub model: String,
    pub duration: f64,
    #[serde(default = "default_rate")]
    pub control_rate: f64,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub contacts: Vec<ContactSpec>,
    #[serde(default)]
    pub domains: Vec<DomainEntry>,
    #[serde(default)]
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub barriers: Vec<BarrierEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ext_force: Option<ExtForceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gait: Option<GaitSection>,
    #[serde(default)]
    pub assertions: Assertions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Coordinate name to value; unlisted coordinates start at zero.
    #[serde(default)]
    pub q: BTreeMap<String, f64>,
    #[serde(default)]
    pub qdot: BTreeMap<String, f64>,
    /// Shift the floating base vertically so the lowest contact frame sits at this height.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub integrator: Integrator,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { dt: DEFAULT_DT, integrator: Integrator::Rk4, alpha: DEFAULT_BAUMGARTE, beta: DEFAULT_BAUMGARTE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub regularization: Regularization,
    pub zmp_shrink: f64,
    pub min_normal_force: f64,
    pub slack_weight: f64,
    pub torque_limits: bool,
    pub friction: bool,
    pub zmp: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let qp = QpSettings::default();
        ControllerSection {
            regularization: Regularization::default(),
            zmp_shrink: DEFAULT_ZMP_SHRINK,
            min_normal_force: MIN_NORMAL_FORCE,
            slack_weight: 1e6,
            torque_limits: true,
            friction: true,
            zmp: true,
            tolerance: qp.tolerance,
            max_iterations: qp.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub name: String,
    pub start: f64,
    #[serde(default)]
    pub contacts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKindEntry {
    FramePosition,
    FrameOrientation,
    ComPosition,
    ComHeight,
    JointSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub name: String,
    pub kind: TaskKindEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    /// `x`, `y`, `z` for positions; `yaw`, `pitch`, `roll` for orientations.
    #[serde(default)]
    pub axes: Vec<String>,
    #[serde(default)]
    pub joints: Vec<String>,
    /// One signal per component. Absent: hold the initial value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<Signal>>,
    #[serde(default = "default_kp")]
    pub kp: f64,
    #[serde(default = "default_kd")]
    pub kd: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Domains in which the task is active; empty means all.
    #[serde(default)]
    pub domains: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierKindEntry {
    FrameCoordinate,
    FrameSeparation,
    FrameVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierEntry {
    pub name: String,
    pub kind: BarrierKindEntry,
    pub frame: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other: Option<String>,
    pub axis: String,
    #[serde(default = "default_sign")]
    pub sign: f64,
    /// Offset for position barriers, velocity limit for velocity barriers.
    #[serde(default)]
    pub threshold: f64,
    #[serde(default = "default_poles")]
    pub poles: Vec<f64>,
    #[serde(default)]
    pub slack: bool,
    #[serde(default)]
    pub domains: Vec<String>,
    /// When false the barrier is only evaluated and logged.
    #[serde(default = "default_true")]
    pub enforce: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtForceEntry {
    pub frame: String,
    #[serde(default)]
    pub fx: f64,
    #[serde(default)]
    pub fy: f64,
    #[serde(default)]
    pub fz: f64,
    #[serde(default)]
    pub mx: f64,
    #[serde(default)]
    pub my: f64,
    #[serde(default)]
    pub mz: f64,
    pub start: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitSection {
    pub torso: String,
    pub left: String,
    pub right: String,
    /// Duration of the initial weight shift, s.
    pub shift: f64,
    pub first_stance: Side,
    /// Joints left unactuated while the left or right foot is the stance foot.
    #[serde(default)]
    pub left_passive: Vec<String>,
    #[serde(default)]
    pub right_passive: Vec<String>,
    /// Stop once the torso drops below this fraction of the CoM height.
    #[serde(default = "default_fall")]
    pub fall_fraction: f64,
    #[serde(default)]
    pub params: GaitParams,
    #[serde(default)]
    pub weights: GaitWeights,
}

fn default_fall() -> f64 {
    0.6
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    /// Lower bound on the smallest value each barrier reaches.
    #[serde(default)]
    pub min_h: BTreeMap<String, f64>,
    /// The smallest value of each barrier must fall below this.
    #[serde(default)]
    pub h_below: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_consistency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_separation: Option<f64>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        file.check_header()?;
        Ok(file)
    }

    /// Parse after applying `key=value` overrides.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return ScenarioFile::parse(text);
        }
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let file: ScenarioFile = table.try_into().map_err(|e: toml::de::Error| Error::Scenario(e.to_string()))?;
        file.check_header()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    fn check_header(&self) -> Result<()> {
        if self.format != SCENARIO_FORMAT {
            return Err(Error::Scenario(format!("format must be `{SCENARIO_FORMAT}`, found `{}`", self.format)));
        }
        if self.version != SCENARIO_VERSION {
            return Err(Error::Scenario(format!("unsupported scenario version {}", self.version)));
        }
        Ok(())
    }
}

/// Set `a.b.c = value` in a parsed table. Array elements are addressed by index or by
/// their `name` field. Integers written into float fields stay floats.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Scenario(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let mut value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let bad = |msg: &str| Error::Scenario(format!("override `{key}`: {msg}"));
    let mut cur = table;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if last {
            if let (Some(toml::Value::Float(_)), toml::Value::Integer(n)) = (cur.get(*part), &value) {
                value = toml::Value::Float(*n as f64);
            }
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let next = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match next {
            toml::Value::Table(t) => t,
            toml::Value::Array(items) => {
                let sel = parts[i + 1];
                let idx = sel.parse::<usize>().ok().or_else(|| {
                    items.iter().position(|it| it.get("name").and_then(|n| n.as_str()) == Some(sel))
                });
                let idx = idx.ok_or_else(|| bad(&format!("no element `{sel}` in `{part}`")))?;
                if i + 2 == parts.len() {
                    return Err(bad("cannot replace a whole array element"));
                }
                // Skip the selector segment.
                return apply_rest(items[idx].as_table_mut().ok_or_else(|| bad("element is not a table"))?, &parts[i + 2..], value, key);
            }
            _ => return Err(bad(&format!("`{part}` is not a table"))),
        };
    }
    Ok(())
}

fn apply_rest(table: &mut toml::Table, rest: &[&str], value: toml::Value, key: &str) -> Result<()> {
    let assignment = format!("{}={}", rest.join("."), value);
    apply_override(table, &assignment).map_err(|e| match e {
        Error::Scenario(m) => Error::Scenario(format!("{m} (in `{key}`)")),
        other => other,
    })
}

/// Fully resolved scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub model: RobotModel,
    pub q0: DVector<f64>,
    pub qdot0: DVector<f64>,
    pub sim: SimConfig,
    pub substeps: usize,
    pub options: ControllerOptions,
    pub contacts: Vec<(ContactSpec, FrameId)>,
    pub domains: Vec<DomainEntry>,
    pub tasks: Vec<(TaskSpec, Vec<String>)>,
    pub barriers: Vec<ResolvedBarrier>,
    pub forces: Vec<ExternalForce>,
    pub gait: Option<ResolvedGait>,
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ResolvedBarrier {
    pub spec: BarrierSpec,
    pub domains: Vec<String>,
    pub enforce: bool,
}

impl ResolvedBarrier {
    pub fn active_in(&self, domain: &str) -> bool {
        self.domains.is_empty() || self.domains.iter().any(|d| d == domain)
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedGait {
    pub section: GaitSection,
    pub frames: GaitFrames,
    /// Indices of the left and right sole contacts.
    pub left_contact: usize,
    pub right_contact: usize,
    /// Actuator indices held at zero torque during left and right stance.
    pub left_passive: Vec<usize>,
    pub right_passive: Vec<usize>,
}

/// Domain names used by walking scenarios.
pub const DOUBLE_SUPPORT: &str = "double";
pub const SINGLE_SUPPORT: &str = "single";

fn axis_index(axis: &str, angular: bool) -> Result<usize> {
    let names: [&str; 3] = if angular { ["yaw", "pitch", "roll"] } else { ["x", "y", "z"] };
    names
        .iter()
        .position(|n| *n == axis)
        .ok_or_else(|| Error::Scenario(format!("unknown axis `{axis}`, expected one of {names:?}")))
}

impl Scenario {
    /// Load a scenario file by path (the `.toml` extension is optional), falling back to
    /// the built-in scenario with the same name.
    pub fn load(name_or_path: &str, overrides: &[String]) -> Result<Self> {
        let given = Path::new(name_or_path);
        let path = if given.is_dir() {
            given.join("scenario.toml")
        } else if given.is_file() {
            given.to_path_buf()
        } else if given.with_extension("toml").is_file() {
            given.with_extension("toml")
        } else {
            let stem = given.file_stem().and_then(|s| s.to_str()).unwrap_or(name_or_path);
            if let Some(src) = builtin_scenario_source(name_or_path).or_else(|| builtin_scenario_source(stem)) {
                return Scenario::from_str(src, None, overrides);
            }
            given.to_path_buf()
        };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Scenario::from_str(&text, path.parent(), overrides)
    }

    pub fn from_str(text: &str, base_dir: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file = ScenarioFile::parse_with_overrides(text, overrides)?;
        let mut s = Scenario::resolve(file, base_dir)?;
        s.overrides = overrides.to_vec();
        Ok(s)
    }

    pub fn resolve(file: ScenarioFile, base_dir: Option<&Path>) -> Result<Self> {
        let err = |m: String| Error::Scenario(m);
        let model = match builtin_model(&file.model) {
            Ok(m) => m,
            Err(_) => {
                let p = PathBuf::from(&file.model);
                let p = match base_dir {
                    Some(d) if p.is_relative() => d.join(p),
                    _ => p,
                };
                load_model_file(&p)?
            }
        };
        if !(file.duration > 0.0) || !(file.control_rate > 0.0) {
            return Err(err("duration and control_rate must be positive".into()));
        }
        let sim = SimConfig { dt: file.sim.dt, integrator: file.sim.integrator, alpha: file.sim.alpha, beta: file.sim.beta };
        sim.validate()?;
        let ratio = 1.0 / (file.control_rate * sim.dt);
        let substeps = ratio.round() as usize;
        if substeps == 0 || (ratio - substeps as f64).abs() > 1e-9 * ratio {
            return Err(err(format!("control period is not a whole number of sim steps ({ratio})")));
        }

        let coords = model.coordinate_names();
        let index = |name: &str| {
            coords
                .iter()
                .position(|c| *c == name)
                .ok_or_else(|| err(format!("unknown coordinate `{name}`; known: {}", coords.join(", "))))
        };
        let mut q0 = DVector::zeros(model.n());
        let mut qdot0 = DVector::zeros(model.n());
        for (k, v) in &file.initial.q {
            q0[index(k)?] = *v;
        }
        for (k, v) in &file.initial.qdot {
            qdot0[index(k)?] = *v;
        }

        let mut contacts = Vec::new();
        for c in &file.contacts {
            if !(c.mu > 0.0) || c.gamma < 0.0 {
                return Err(err(format!("contact `{}`: mu must be positive and gamma nonnegative", c.name)));
            }
            contacts.push((c.clone(), c.validate(&model)?));
        }
        let contact_names: Vec<&str> = file.contacts.iter().map(|c| c.name.as_str()).collect();

        if let Some(ground) = file.initial.ground {
            let z = match model.base {
                BaseType::Fixed => return Err(err("initial.ground needs a floating base".into())),
                BaseType::Planar3Dof => 1,
                BaseType::Spatial6DofEulerZyx => 2,
            };
            if contacts.is_empty() {
                return Err(err("initial.ground needs at least one contact".into()));
            }
            let kin = Kinematics::new(&model, &q0, None);
            let mut low = f64::INFINITY;
            for (_, f) in &contacts {
                low = low.min(kin.frame_pose(&model, *f)?.position.z);
            }
            q0[z] += ground - low;
        }
        model.check_configuration(&q0)?;
        model.check_velocity(&qdot0)?;

        let mut domains = file.domains.clone();
        if file.gait.is_none() {
            if domains.is_empty() {
                domains.push(DomainEntry { name: "main".into(), start: 0.0, contacts: contact_names.iter().map(|s| s.to_string()).collect() });
            }
            domains.sort_by(|a, b| a.start.total_cmp(&b.start));
            if domains[0].start > 0.0 {
                return Err(err("the first domain must start at t = 0".into()));
            }
            for d in &domains {
                for c in &d.contacts {
                    if !contact_names.contains(&c.as_str()) {
                        return Err(err(format!("domain `{}` lists unknown contact `{c}`", d.name)));
                    }
                }
            }
        } else if !domains.is_empty() {
            return Err(err("walking scenarios take their domains from the gait schedule".into()));
        }
        let domain_names: Vec<String> = if file.gait.is_some() {
            vec![DOUBLE_SUPPORT.into(), SINGLE_SUPPORT.into()]
        } else {
            domains.iter().map(|d| d.name.clone()).collect()
        };
        let check_domains = |owner: &str, list: &[String]| -> Result<()> {
            for d in list {
                if !domain_names.contains(d) {
                    return Err(err(format!("`{owner}` refers to unknown domain `{d}`")));
                }
            }
            Ok(())
        };

        let kin0 = Kinematics::new(&model, &q0, None);
        let mut tasks = Vec::new();
        for t in &file.tasks {
            check_domains(&t.name, &t.domains)?;
            let frame = || -> Result<FrameId> {
                let f = t.frame.as_deref().ok_or_else(|| err(format!("task `{}` needs a frame", t.name)))?;
                model.frame_id(f)
            };
            let axes = |angular: bool| -> Result<Vec<usize>> {
                if t.axes.is_empty() {
                    return Ok(vec![0, 1, 2]);
                }
                t.axes.iter().map(|a| axis_index(a, angular)).collect()
            };
            let kind = match t.kind {
                TaskKindEntry::FramePosition => TaskKind::FramePosition { frame: frame()?, axes: axes(false)? },
                TaskKindEntry::FrameOrientation => TaskKind::FrameOrientation { frame: frame()?, axes: axes(true)? },
                TaskKindEntry::ComPosition => TaskKind::ComPosition { axes: axes(false)? },
                TaskKindEntry::ComHeight => TaskKind::ComHeight,
                TaskKindEntry::JointSubset => TaskKind::JointSubset {
                    joints: t.joints.iter().map(|j| model.joint_index(j)).collect::<Result<_>>()?,
                },
            };
            let reference = match &t.reference {
                Some(signals) => Reference::Signals(signals.clone()),
                None => {
                    let probe = TaskSpec::new(&t.name, kind.clone(), Reference::Signals(vec![Signal::Constant { value: 0.0 }; kind.dim()]))?;
                    let value = probe.output(&model, &kin0)?.value;
                    Reference::Signals(value.iter().map(|&v| Signal::Constant { value: v }).collect())
                }
            };
            let mut spec = TaskSpec::new(&t.name, kind, reference)?.with_gains(t.kp, t.kd).with_weight(t.weight);
            spec = spec.validated()?;
            tasks.push((spec, t.domains.clone()));
        }
        if tasks.is_empty() && file.gait.is_none() {
            return Err(err("scenario declares no tasks".into()));
        }

        let mut barriers = Vec::new();
        for b in &file.barriers {
            check_domains(&b.name, &b.domains)?;
            let frame = model.frame_id(&b.frame)?;
            let axis = axis_index(&b.axis, false)?;
            if b.sign != 1.0 && b.sign != -1.0 {
                return Err(err(format!("barrier `{}`: sign must be 1 or -1", b.name)));
            }
            let kind = match b.kind {
                BarrierKindEntry::FrameCoordinate => BarrierKind::FrameCoordinate { frame, axis, sign: b.sign, threshold: b.threshold },
                BarrierKindEntry::FrameSeparation => {
                    let other = b.other.as_deref().ok_or_else(|| err(format!("barrier `{}` needs `other`", b.name)))?;
                    BarrierKind::FrameSeparation { frame, other: model.frame_id(other)?, axis, sign: b.sign, threshold: b.threshold }
                }
                BarrierKindEntry::FrameVelocity => BarrierKind::FrameVelocity { frame, axis, sign: b.sign, limit: b.threshold },
            };
            let mut spec = BarrierSpec::new(&b.name, kind, b.poles.clone())?;
            spec.slack = b.slack;
            if !b.domains.is_empty() {
                spec.activation = crate::safety::Activation::DomainGated;
            }
            barriers.push(ResolvedBarrier { spec, domains: b.domains.clone(), enforce: b.enforce });
        }
        for name in file.assertions.min_h.keys().chain(file.assertions.h_below.keys()) {
            if !file.barriers.iter().any(|b| &b.name == name) {
                return Err(err(format!("assertion refers to unknown barrier `{name}`")));
            }
        }

        let forces = match &file.ext_force {
            Some(f) => {
                if !(f.duration >= 0.0) {
                    return Err(err("ext_force.duration must be nonnegative".into()));
                }
                vec![ExternalForce {
                    frame: model.frame_id(&f.frame)?,
                    force: Vector3::new(f.fx, f.fy, f.fz),
                    moment: Vector3::new(f.mx, f.my, f.mz),
                    start: f.start,
                    duration: f.duration,
                }]
            }
            None => Vec::new(),
        };

        let gait = match &file.gait {
            Some(g) => {
                g.params.validate()?;
                let find = |name: &str| {
                    file.contacts
                        .iter()
                        .position(|c| c.name == name)
                        .ok_or_else(|| err(format!("gait refers to unknown contact `{name}`")))
                };
                let left_contact = find(&g.left)?;
                let right_contact = find(&g.right)?;
                let frames = GaitFrames {
                    torso: model.frame_id(&g.torso)?,
                    left: contacts[left_contact].1,
                    right: contacts[right_contact].1,
                };
                let actuator = |name: &String| -> Result<usize> {
                    let j = model.joint_index(name)?;
                    model
                        .actuated_indices()
                        .iter()
                        .position(|&a| a == j)
                        .ok_or_else(|| err(format!("gait: joint `{name}` is not actuated")))
                };
                let left_passive = g.left_passive.iter().map(actuator).collect::<Result<_>>()?;
                let right_passive = g.right_passive.iter().map(actuator).collect::<Result<_>>()?;
                Some(ResolvedGait { section: g.clone(), frames, left_contact, right_contact, left_passive, right_passive })
            }
            None => None,
        };

        let c = &file.controller;
        let options = ControllerOptions {
            regularization: c.regularization,
            zmp_shrink: c.zmp_shrink,
            min_normal_force: c.min_normal_force,
            slack_weight: c.slack_weight,
            torque_limits: c.torque_limits,
            friction: c.friction,
            zmp: c.zmp,
            passive: Vec::new(),
            qp: QpSettings { tolerance: c.tolerance, max_iterations: c.max_iterations, ..QpSettings::default() },
        };

        Ok(Scenario {
            file,
            model,
            q0,
            qdot0,
            sim,
            substeps,
            options,
            contacts,
            domains,
            tasks,
            barriers,
            forces,
            gait,
            overrides: Vec::new(),
        })
    }

    pub fn ticks(&self) -> usize {
        (self.file.duration * self.file.control_rate).round() as usize
    }
}
