use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;

/// Pitch margin away from ±π/2 enforced on spatial floating bases.
pub const GIMBAL_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseType {
    Fixed,
    /// x, z translation and pitch about y.
    Planar3Dof,
    /// x, y, z translation followed by Z-Y-X Euler angles.
    Spatial6DofEulerZyx,
}

impl BaseType {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(BaseType::Fixed),
            "planar-3dof" => Ok(BaseType::Planar3Dof),
            "spatial-6dof-euler-zyx" => Ok(BaseType::Spatial6DofEulerZyx),
            other => Err(Error::ModelFormat(format!("unknown base type `{other}`"))),
        }
    }

    pub fn dofs(self) -> usize {
        match self {
            BaseType::Fixed => 0,
            BaseType::Planar3Dof => 3,
            BaseType::Spatial6DofEulerZyx => 6,
        }
    }
}

/// One-degree-of-freedom joint primitive. Floating joints expand into chains of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone)]
pub struct JointSpec {
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    /// Joint origin in the parent body frame.
    pub origin: Vector3<f64>,
    pub actuated: bool,
    pub limits: Option<(f64, f64)>,
    pub torque_limit: Option<f64>,
}

impl JointSpec {
    pub fn revolute(axis: Vector3<f64>, origin: Vector3<f64>) -> Self {
        JointSpec {
            kind: JointKind::Revolute,
            axis,
            origin,
            actuated: true,
            limits: None,
            torque_limit: None,
        }
    }

    pub fn prismatic(axis: Vector3<f64>, origin: Vector3<f64>) -> Self {
        JointSpec {
            kind: JointKind::Prismatic,
            ..JointSpec::revolute(axis, origin)
        }
    }

    pub fn passive(mut self) -> Self {
        self.actuated = false;
        self
    }

    pub fn with_torque_limit(mut self, limit: f64) -> Self {
        self.torque_limit = Some(limit);
        self
    }
}

#[derive(Debug, Clone)]
pub struct BodySpec {
    pub name: String,
    /// `None` attaches to the world (or to the floating base joint).
    pub parent: Option<String>,
    /// Must be `None` exactly for the root of a floating-base model.
    pub joint: Option<JointSpec>,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

/// A primitive joint together with the (possibly virtual) body it moves.
#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub body_name: String,
    pub kind: Primitive,
    pub axis: Vector3<f64>,
    pub parent: Option<usize>,
    pub origin: Vector3<f64>,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
    pub actuated: bool,
    pub limits: Option<(f64, f64)>,
    pub torque_limit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId(pub(crate) usize);

impl FrameId {
    pub const WORLD: FrameId = FrameId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub name: String,
    /// Link the frame is rigidly attached to; `None` for world-fixed frames.
    pub link: Option<usize>,
    pub offset: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

#[derive(Debug, Clone)]
pub struct LoopClosure {
    pub name: String,
    pub frame_a: FrameId,
    pub frame_b: FrameId,
    pub length: f64,
}

/// Immutable kinematic and inertial description of a robot.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    pub base: BaseType,
    pub gravity: f64,
    pub(crate) links: Vec<Link>,
    pub(crate) frames: Vec<Frame>,
    pub(crate) loops: Vec<LoopClosure>,
    /// Coordinate index of each actuator, in actuator order.
    pub(crate) actuators: Vec<usize>,
    /// `supports[i][j]` is true when link `j` lies on the path from the root to link `i`.
    pub(crate) supports: Vec<Vec<bool>>,
    frame_lookup: HashMap<String, FrameId>,
    joint_lookup: HashMap<String, usize>,
}

impl RobotModel {
    /// Number of generalized coordinates.
    pub fn n(&self) -> usize {
        self.links.len()
    }

    /// Number of actuators.
    pub fn m(&self) -> usize {
        self.actuators.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn loops(&self) -> &[LoopClosure] {
        &self.loops
    }

    pub fn actuated_indices(&self) -> &[usize] {
        &self.actuators
    }

    pub fn coordinate_names(&self) -> Vec<&str> {
        self.links.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn frame_id(&self, name: &str) -> Result<FrameId> {
        self.frame_lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownFrame(name.to_string()))
    }

    pub fn frame(&self, id: FrameId) -> Result<&Frame> {
        self.frames
            .get(id.0)
            .ok_or_else(|| Error::UnknownFrame(format!("#{}", id.0)))
    }

    pub fn joint_index(&self, name: &str) -> Result<usize> {
        self.joint_lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownJoint(name.to_string()))
    }

    /// Torque distribution matrix `B` (n × m), one unit entry per column.
    pub fn actuation_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n(), self.m());
        for (col, &i) in self.actuators.iter().enumerate() {
            b[(i, col)] = 1.0;
        }
        b
    }

    /// Per-actuator torque bound, `f64::INFINITY` when unlimited.
    pub fn torque_limits(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.m(),
            self.actuators
                .iter()
                .map(|&i| self.links[i].torque_limit.unwrap_or(f64::INFINITY)),
        )
    }

    /// Index of the base pitch coordinate for spatial floating bases.
    pub fn base_pitch_index(&self) -> Option<usize> {
        match self.base {
            BaseType::Spatial6DofEulerZyx => Some(4),
            _ => None,
        }
    }

    pub fn check_configuration(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.n() {
            return Err(Error::Dimension {
                context: "configuration",
                expected: self.n(),
                actual: q.len(),
            });
        }
        if let Some(i) = self.base_pitch_index() {
            if q[i].abs() > std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
                return Err(Error::GimbalLock { pitch: q[i] });
            }
        }
        Ok(())
    }

    pub fn check_velocity(&self, qdot: &DVector<f64>) -> Result<()> {
        if qdot.len() != self.n() {
            return Err(Error::Dimension {
                context: "velocity",
                expected: self.n(),
                actual: qdot.len(),
            });
        }
        Ok(())
    }

    pub fn zero_configuration(&self) -> DVector<f64> {
        DVector::zeros(self.n())
    }
}

/// Generalized position and velocity at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>, t: f64) -> Self {
        State { q, qdot, t }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        State {
            q,
            qdot: DVector::zeros(n),
            t: 0.0,
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        model.check_configuration(&self.q)?;
        model.check_velocity(&self.qdot)?;
        if self.q.iter().chain(self.qdot.iter()).any(|v| !v.is_finite()) {
            return Err(Error::SimulationFault {
                t: self.t,
                reason: "non-finite state".into(),
            });
        }
        Ok(())
    }
}

pub struct ModelBuilder {
    name: String,
    base: BaseType,
    gravity: f64,
    bodies: Vec<BodySpec>,
    frames: Vec<(String, String, Vector3<f64>, Matrix3<f64>)>,
    loops: Vec<(String, String, String, f64)>,
}

impl ModelBuilder {
    pub fn new(name: impl Into<String>, base: BaseType) -> Self {
        ModelBuilder {
            name: name.into(),
            base,
            gravity: GRAVITY,
            bodies: Vec::new(),
            frames: Vec::new(),
            loops: Vec::new(),
        }
    }

    pub fn gravity(mut self, g: f64) -> Self {
        self.gravity = g;
        self
    }

    pub fn body(mut self, spec: BodySpec) -> Self {
        self.bodies.push(spec);
        self
    }

    pub fn frame(mut self, name: &str, body: &str, offset: Vector3<f64>) -> Self {
        self.frames
            .push((name.into(), body.into(), offset, Matrix3::identity()));
        self
    }

    pub fn frame_rotated(
        mut self,
        name: &str,
        body: &str,
        offset: Vector3<f64>,
        rotation: Matrix3<f64>,
    ) -> Self {
        self.frames.push((name.into(), body.into(), offset, rotation));
        self
    }

    pub fn loop_closure(mut self, name: &str, frame_a: &str, frame_b: &str, length: f64) -> Self {
        self.loops
            .push((name.into(), frame_a.into(), frame_b.into(), length));
        self
    }

    pub fn build(self) -> Result<RobotModel> {
        let invalid = |msg: String| Error::InvalidModel(msg);
        let mut links: Vec<Link> = Vec::new();
        let mut body_link: HashMap<String, usize> = HashMap::new();
        let mut joint_lookup = HashMap::new();
        let mut floating_root_seen = false;

        if self.bodies.is_empty() {
            return Err(invalid("model has no bodies".into()));
        }

        for spec in &self.bodies {
            if body_link.contains_key(&spec.name) || spec.name == "world" {
                return Err(invalid(format!("duplicate body name `{}`", spec.name)));
            }
            if !(spec.mass > 0.0) || !spec.mass.is_finite() {
                return Err(invalid(format!("body `{}` mass must be > 0", spec.name)));
            }
            let sym = (spec.inertia - spec.inertia.transpose()).amax();
            if sym > 1e-12 || spec.inertia.cholesky().is_none() {
                return Err(invalid(format!(
                    "body `{}` inertia must be symmetric positive definite",
                    spec.name
                )));
            }
            let parent = match spec.parent.as_deref() {
                None | Some("world") => None,
                Some(p) => Some(*body_link.get(p).ok_or_else(|| {
                    invalid(format!(
                        "body `{}` references parent `{p}` that is not declared before it",
                        spec.name
                    ))
                })?),
            };

            match (&spec.joint, parent, self.base) {
                (None, None, BaseType::Fixed) => {
                    return Err(invalid(format!(
                        "body `{}` needs a joint on a fixed-base model",
                        spec.name
                    )))
                }
                (None, None, base) => {
                    if floating_root_seen {
                        return Err(invalid("floating base must have a single root body".into()));
                    }
                    floating_root_seen = true;
                    let axes: Vec<(&str, Primitive, Vector3<f64>)> = match base {
                        BaseType::Planar3Dof => vec![
                            ("x", Primitive::Prismatic, Vector3::x()),
                            ("z", Primitive::Prismatic, Vector3::z()),
                            ("pitch", Primitive::Revolute, Vector3::y()),
                        ],
                        _ => vec![
                            ("x", Primitive::Prismatic, Vector3::x()),
                            ("y", Primitive::Prismatic, Vector3::y()),
                            ("z", Primitive::Prismatic, Vector3::z()),
                            ("yaw", Primitive::Revolute, Vector3::z()),
                            ("pitch", Primitive::Revolute, Vector3::y()),
                            ("roll", Primitive::Revolute, Vector3::x()),
                        ],
                    };
                    let last = axes.len() - 1;
                    let mut prev = None;
                    for (k, (suffix, kind, axis)) in axes.into_iter().enumerate() {
                        let real = k == last;
                        let name = format!("{}_{}", spec.name, suffix);
                        joint_lookup.insert(name.clone(), links.len());
                        links.push(Link {
                            name,
                            body_name: if real {
                                spec.name.clone()
                            } else {
                                format!("{}#{}", spec.name, suffix)
                            },
                            kind,
                            axis,
                            parent: prev,
                            origin: Vector3::zeros(),
                            mass: if real { spec.mass } else { 0.0 },
                            com: if real { spec.com } else { Vector3::zeros() },
                            inertia: if real { spec.inertia } else { Matrix3::zeros() },
                            actuated: false,
                            limits: None,
                            torque_limit: None,
                        });
                        prev = Some(links.len() - 1);
                    }
                }
                (None, Some(_), _) => {
                    return Err(invalid(format!("body `{}` is missing its joint", spec.name)))
                }
                (Some(_), None, base) if base != BaseType::Fixed => {
                    return Err(invalid(format!(
                        "body `{}` attaches to the world on a floating-base model",
                        spec.name
                    )))
                }
                (Some(j), parent, _) => {
                    let norm = j.axis.norm();
                    if !(norm > 1e-9) {
                        return Err(invalid(format!("body `{}` joint axis is zero", spec.name)));
                    }
                    if let Some((lo, hi)) = j.limits {
                        if !(lo < hi) {
                            return Err(invalid(format!("body `{}` joint limits empty", spec.name)));
                        }
                    }
                    if let Some(tl) = j.torque_limit {
                        if !(tl > 0.0) {
                            return Err(invalid(format!(
                                "body `{}` torque limit must be > 0",
                                spec.name
                            )));
                        }
                    }
                    joint_lookup.insert(spec.name.clone(), links.len());
                    links.push(Link {
                        name: spec.name.clone(),
                        body_name: spec.name.clone(),
                        kind: match j.kind {
                            JointKind::Revolute => Primitive::Revolute,
                            JointKind::Prismatic => Primitive::Prismatic,
                        },
                        axis: j.axis / norm,
                        parent,
                        origin: j.origin,
                        mass: spec.mass,
                        com: spec.com,
                        inertia: spec.inertia,
                        actuated: j.actuated,
                        limits: j.limits,
                        torque_limit: j.torque_limit,
                    });
                }
            }
            body_link.insert(spec.name.clone(), links.len() - 1);
        }
        if self.base != BaseType::Fixed && !floating_root_seen {
            return Err(invalid("floating-base model has no root body".into()));
        }

        let mut frames = vec![Frame {
            name: "world".into(),
            link: None,
            offset: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }];
        let mut frame_lookup = HashMap::new();
        frame_lookup.insert("world".to_string(), FrameId::WORLD);
        for spec in &self.bodies {
            frame_lookup.insert(spec.name.clone(), FrameId(frames.len()));
            frames.push(Frame {
                name: spec.name.clone(),
                link: Some(body_link[&spec.name]),
                offset: Vector3::zeros(),
                rotation: Matrix3::identity(),
            });
        }
        for (name, body, offset, rotation) in &self.frames {
            if frame_lookup.contains_key(name) {
                return Err(invalid(format!("duplicate frame name `{name}`")));
            }
            let link = if body == "world" {
                None
            } else {
                Some(
                    *body_link
                        .get(body)
                        .ok_or_else(|| invalid(format!("frame `{name}` references unknown body `{body}`")))?,
                )
            };
            frame_lookup.insert(name.clone(), FrameId(frames.len()));
            frames.push(Frame {
                name: name.clone(),
                link,
                offset: *offset,
                rotation: *rotation,
            });
        }

        let mut loops = Vec::new();
        for (name, a, b, length) in &self.loops {
            let fa = *frame_lookup
                .get(a)
                .ok_or_else(|| invalid(format!("loop `{name}` references unknown frame `{a}`")))?;
            let fb = *frame_lookup
                .get(b)
                .ok_or_else(|| invalid(format!("loop `{name}` references unknown frame `{b}`")))?;
            if fa == fb {
                return Err(invalid(format!("loop `{name}` must connect two distinct frames")));
            }
            if !(*length > 0.0) {
                return Err(invalid(format!("loop `{name}` reference length must be > 0")));
            }
            loops.push(LoopClosure {
                name: name.clone(),
                frame_a: fa,
                frame_b: fb,
                length: *length,
            });
        }

        let n = links.len();
        let mut supports = vec![vec![false; n]; n];
        for i in 0..n {
            let mut cur = Some(i);
            while let Some(j) = cur {
                supports[i][j] = true;
                cur = links[j].parent;
            }
        }
        let actuators = (0..n).filter(|&i| links[i].actuated).collect();

        Ok(RobotModel {
            name: self.name,
            base: self.base,
            gravity: self.gravity,
            links,
            frames,
            loops,
            actuators,
            supports,
            frame_lookup,
            joint_lookup,
        })
    }
}
