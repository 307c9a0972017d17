//! Task-space outputs, reference signals, the PD servo target and weighted stacking.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{euler_zyx, euler_zyx_rate_bias, euler_zyx_rate_matrix, wrap_angle};
use crate::multibody::{FrameId, Kinematics, RobotModel};

pub const DEFAULT_KP: f64 = 100.0;
pub const DEFAULT_KD: f64 = 20.0;

/// Step used for sampled-reference derivatives, one control period at 1 kHz.
const SAMPLED_STEP: f64 = 1e-3;

/// Scalar reference signal of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Signal {
    Constant {
        value: f64,
    },
    /// `offset + amplitude · sin(omega · t + phase)`.
    Sinusoid {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `base − depth (1 − e^{−t}) + amplitude · sin(π t)`.
    Squat {
        base: f64,
        #[serde(default = "squat_depth")]
        depth: f64,
        #[serde(default = "squat_amplitude")]
        amplitude: f64,
    },
    /// `offset + rate · max(peak − |t − peak|, 0)`.
    Bow {
        #[serde(default)]
        offset: f64,
        #[serde(default = "bow_rate")]
        rate: f64,
        #[serde(default = "bow_peak")]
        peak: f64,
    },
    /// Piecewise-linear samples; derivatives by central differences.
    Sampled {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

fn squat_depth() -> f64 {
    0.12
}
fn squat_amplitude() -> f64 {
    0.03
}
fn bow_rate() -> f64 {
    0.45
}
fn bow_peak() -> f64 {
    3.0
}

impl Signal {
    /// Value, first and second derivative at `t`.
    pub fn sample(&self, t: f64) -> Result<[f64; 3]> {
        if !t.is_finite() {
            return Err(Error::ReferenceUndefined(t));
        }
        Ok(match *self {
            Signal::Constant { value } => [value, 0.0, 0.0],
            Signal::Sinusoid { offset, amplitude, omega, phase } => {
                let (s, c) = (omega * t + phase).sin_cos();
                [offset + amplitude * s, amplitude * omega * c, -amplitude * omega * omega * s]
            }
            Signal::Squat { base, depth, amplitude } => {
                if t < 0.0 {
                    return Err(Error::ReferenceUndefined(t));
                }
                let e = (-t).exp();
                let w = std::f64::consts::PI;
                let (s, c) = (w * t).sin_cos();
                [
                    base - depth * (1.0 - e) + amplitude * s,
                    -depth * e + amplitude * w * c,
                    depth * e - amplitude * w * w * s,
                ]
            }
            Signal::Bow { offset, rate, peak } => {
                if t < 0.0 {
                    return Err(Error::ReferenceUndefined(t));
                }
                let v = peak - (t - peak).abs();
                if v <= 0.0 {
                    [offset, 0.0, 0.0]
                } else {
                    [offset + rate * v, if t < peak { rate } else { -rate }, 0.0]
                }
            }
            Signal::Sampled { ref times, ref values } => {
                let at = |x: f64| interpolate(times, values, x).ok_or(Error::ReferenceUndefined(x));
                let y = at(t)?;
                let h = SAMPLED_STEP;
                let lo = times.first().copied().unwrap_or(f64::NAN);
                let hi = times.last().copied().unwrap_or(f64::NAN);
                let (ym, yp) = (at((t - h).max(lo))?, at((t + h).min(hi))?);
                let span = (t + h).min(hi) - (t - h).max(lo);
                let rate = if span > 0.0 { (yp - ym) / span } else { 0.0 };
                let accel = if t - h >= lo && t + h <= hi { (yp - 2.0 * y + ym) / (h * h) } else { 0.0 };
                [y, rate, accel]
            }
        })
    }
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> Option<f64> {
    if times.is_empty() || times.len() != values.len() || t < times[0] || t > *times.last()? {
        return None;
    }
    let k = times.partition_point(|&x| x <= t);
    if k == times.len() {
        return values.last().copied();
    }
    if k == 0 {
        return Some(values[0]);
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    Some(values[k - 1] * (1.0 - w) + values[k] * w)
}

/// Desired output with its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub value: DVector<f64>,
    pub rate: DVector<f64>,
    pub accel: DVector<f64>,
}

impl ReferenceSample {
    pub fn hold(value: DVector<f64>) -> Self {
        let n = value.len();
        ReferenceSample { value, rate: DVector::zeros(n), accel: DVector::zeros(n) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// One signal per output component.
    Signals(Vec<Signal>),
    /// Set externally each tick, e.g. by the gait planner.
    Direct(ReferenceSample),
}

impl Reference {
    pub fn sample(&self, t: f64) -> Result<ReferenceSample> {
        match self {
            Reference::Signals(signals) => {
                let n = signals.len();
                let mut out = ReferenceSample::hold(DVector::zeros(n));
                for (k, s) in signals.iter().enumerate() {
                    let [y, yd, ydd] = s.sample(t)?;
                    out.value[k] = y;
                    out.rate[k] = yd;
                    out.accel[k] = ydd;
                }
                Ok(out)
            }
            Reference::Direct(sample) => Ok(sample.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Reference::Signals(s) => s.len(),
            Reference::Direct(s) => s.value.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    /// Selected world-frame coordinates of a frame origin.
    FramePosition { frame: FrameId, axes: Vec<usize> },
    /// Selected Z-Y-X Euler angles `(yaw, pitch, roll)` of a frame.
    FrameOrientation { frame: FrameId, axes: Vec<usize> },
    ComPosition { axes: Vec<usize> },
    ComHeight,
    JointSubset { joints: Vec<usize> },
}

impl TaskKind {
    pub fn dim(&self) -> usize {
        match self {
            TaskKind::FramePosition { axes, .. }
            | TaskKind::FrameOrientation { axes, .. }
            | TaskKind::ComPosition { axes } => axes.len(),
            TaskKind::ComHeight => 1,
            TaskKind::JointSubset { joints } => joints.len(),
        }
    }

    fn is_angular(&self) -> bool {
        matches!(self, TaskKind::FrameOrientation { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub reference: Reference,
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
    pub weight: DVector<f64>,
}

impl TaskSpec {
    /// Task with default gains and unit weight.
    pub fn new(name: impl Into<String>, kind: TaskKind, reference: Reference) -> Result<Self> {
        let d = kind.dim();
        TaskSpec {
            name: name.into(),
            kind,
            reference,
            kp: DVector::from_element(d, DEFAULT_KP),
            kd: DVector::from_element(d, DEFAULT_KD),
            weight: DVector::from_element(d, 1.0),
        }
        .validated()
    }

    pub fn with_gains(mut self, kp: f64, kd: f64) -> Self {
        self.kp.fill(kp);
        self.kd.fill(kd);
        self
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.weight.fill(w);
        self
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn validated(self) -> Result<Self> {
        let d = self.dim();
        let bad = |reason: String| Error::InvalidTask { name: self.name.clone(), reason };
        if d == 0 {
            return Err(bad("task selects no components".into()));
        }
        if let TaskKind::FramePosition { axes, .. }
        | TaskKind::FrameOrientation { axes, .. }
        | TaskKind::ComPosition { axes } = &self.kind
        {
            if axes.iter().any(|&a| a > 2) {
                return Err(bad("axis index out of range".into()));
            }
        }
        if self.reference.dim() != d {
            return Err(bad(format!("reference has {} components, task has {d}", self.reference.dim())));
        }
        for (label, v) in [("kp", &self.kp), ("kd", &self.kd), ("weight", &self.weight)] {
            if v.len() != d {
                return Err(bad(format!("{label} has {} entries, task has {d}", v.len())));
            }
        }
        if self.kp.iter().chain(self.kd.iter()).any(|&g| !(g > 0.0)) {
            return Err(bad("gains must be positive".into()));
        }
        if self.weight.iter().any(|&w| !(w >= 0.0)) {
            return Err(bad("weights must be nonnegative".into()));
        }
        Ok(self)
    }

    /// Actual output `y^a(q)`, its Jacobian and `J̇_y q̇`.
    pub fn output(&self, model: &RobotModel, kin: &Kinematics) -> Result<TaskOutput> {
        let n = model.n();
        let d = self.dim();
        let mut out = TaskOutput {
            value: DVector::zeros(d),
            jacobian: DMatrix::zeros(d, n),
            jdot_qdot: DVector::zeros(d),
        };
        match &self.kind {
            TaskKind::FramePosition { frame, axes } => {
                let pose = kin.frame_pose(model, *frame)?;
                let jac = kin.frame_jacobian(model, *frame)?;
                let jdq = kin.frame_jdot_qdot(model, *frame)?;
                for (k, &a) in axes.iter().enumerate() {
                    out.value[k] = pose.position[a];
                    out.jacobian.row_mut(k).copy_from(&jac.row(a));
                    out.jdot_qdot[k] = jdq[a];
                }
            }
            TaskKind::FrameOrientation { frame, axes } => {
                let pose = kin.frame_pose(model, *frame)?;
                let e = euler_zyx(&pose.rotation);
                let em = euler_zyx_rate_matrix(&e);
                let inv = em.try_inverse().ok_or(Error::GimbalLock { pitch: e[1] })?;
                let jac = kin.frame_jacobian(model, *frame)?;
                let jw = jac.rows(3, 3);
                let jdq = kin.frame_jdot_qdot(model, *frame)?;
                let omega = Vector3::from_iterator((&jw * kin_qdot(kin, n)).iter().copied());
                let rate = inv * omega;
                let alpha = Vector3::new(jdq[3], jdq[4], jdq[5]);
                let bias = inv * (alpha - euler_zyx_rate_bias(&e, &rate));
                let je = DMatrix::from_iterator(3, 3, inv.iter().copied()) * jw;
                for (k, &a) in axes.iter().enumerate() {
                    out.value[k] = e[a];
                    out.jacobian.row_mut(k).copy_from(&je.row(a));
                    out.jdot_qdot[k] = bias[a];
                }
            }
            TaskKind::ComPosition { axes } => {
                let c = kin.com_position(model);
                let jac = kin.com_jacobian(model);
                let jdq = kin.com_jdot_qdot(model);
                for (k, &a) in axes.iter().enumerate() {
                    out.value[k] = c[a];
                    out.jacobian.row_mut(k).copy_from(&jac.row(a));
                    out.jdot_qdot[k] = jdq[a];
                }
            }
            TaskKind::ComHeight => {
                out.value[0] = kin.com_position(model).z;
                out.jacobian.row_mut(0).copy_from(&kin.com_jacobian(model).row(2));
                out.jdot_qdot[0] = kin.com_jdot_qdot(model).z;
            }
            TaskKind::JointSubset { joints } => {
                for (k, &j) in joints.iter().enumerate() {
                    out.value[k] = kin.q()[j];
                    out.jacobian[(k, j)] = 1.0;
                }
            }
        }
        Ok(out)
    }

    /// Output error against the reference at `t`, with the servo target.
    pub fn evaluate(&self, model: &RobotModel, kin: &Kinematics, t: f64) -> Result<TaskEval> {
        let output = self.output(model, kin)?;
        let reference = self.reference.sample(t)?;
        let mut error = &output.value - &reference.value;
        if self.kind.is_angular() {
            error.apply(|e| *e = wrap_angle(*e));
        }
        let error_rate = &output.jacobian * kin_qdot(kin, model.n()) - &reference.rate;
        let y_star = -self.kp.component_mul(&error) - self.kd.component_mul(&error_rate) + &reference.accel;
        Ok(TaskEval { output, reference, error, error_rate, y_star })
    }
}

fn kin_qdot(kin: &Kinematics, n: usize) -> DVector<f64> {
    kin.qdot().cloned().unwrap_or_else(|| DVector::zeros(n))
}

#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub jdot_qdot: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct TaskEval {
    pub output: TaskOutput,
    pub reference: ReferenceSample,
    /// `y = y^a − y^d`.
    pub error: DVector<f64>,
    /// `ẏ = J_y q̇ − ẏ^d`.
    pub error_rate: DVector<f64>,
    /// `−K_p y − K_d ẏ + ÿ^d`.
    pub y_star: DVector<f64>,
}

/// `(y, ẏ)` for one task.
pub fn task_error(
    task: &TaskSpec,
    model: &RobotModel,
    t: f64,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let kin = Kinematics::new(model, q, Some(qdot));
    let e = task.evaluate(model, &kin, t)?;
    Ok((e.error, e.error_rate))
}

pub fn task_servo(
    task: &TaskSpec,
    model: &RobotModel,
    t: f64,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<DVector<f64>> {
    let kin = Kinematics::new(model, q, Some(qdot));
    Ok(task.evaluate(model, &kin, t)?.y_star)
}

/// Vertically stacked task rows in declaration order.
#[derive(Debug, Clone)]
pub struct TaskStack {
    pub jacobian: DMatrix<f64>,
    pub jdot_qdot: DVector<f64>,
    pub y_star: DVector<f64>,
    /// Diagonal of `W`.
    pub weights: DVector<f64>,
    pub evals: Vec<TaskEval>,
}

impl TaskStack {
    pub fn rows(&self) -> usize {
        self.y_star.len()
    }
}

pub fn stack_tasks(tasks: &[TaskSpec], model: &RobotModel, kin: &Kinematics, t: f64) -> Result<TaskStack> {
    if tasks.is_empty() {
        return Err(Error::InvalidTask { name: "<stack>".into(), reason: "no tasks declared".into() });
    }
    let rows: usize = tasks.iter().map(TaskSpec::dim).sum();
    let n = model.n();
    let mut stack = TaskStack {
        jacobian: DMatrix::zeros(rows, n),
        jdot_qdot: DVector::zeros(rows),
        y_star: DVector::zeros(rows),
        weights: DVector::zeros(rows),
        evals: Vec::with_capacity(tasks.len()),
    };
    let mut r = 0;
    for task in tasks {
        let e = task.evaluate(model, kin, t)?;
        let d = task.dim();
        if e.output.jacobian.shape() != (d, n) {
            return Err(Error::Dimension { context: "task jacobian", expected: d, actual: e.output.jacobian.nrows() });
        }
        stack.jacobian.rows_mut(r, d).copy_from(&e.output.jacobian);
        stack.jdot_qdot.rows_mut(r, d).copy_from(&e.output.jdot_qdot);
        stack.y_star.rows_mut(r, d).copy_from(&e.y_star);
        stack.weights.rows_mut(r, d).copy_from(&task.weight);
        stack.evals.push(e);
        r += d;
    }
    Ok(stack)
}
