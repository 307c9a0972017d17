//! Walking references: step schedule, swing-foot trajectory, the single-support output
//! stack and linear-inverted-pendulum foot placement.

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multibody::{FrameId, Kinematics, RobotModel};
use crate::tasks::{Reference, ReferenceSample, TaskKind, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwingProfile {
    /// `z = apex · sin(2π τ / T)`.
    FullSine,
    /// `z = apex · sin(π τ / T)`, which stays above the ground for the whole step.
    HalfSine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitParams {
    /// Step period `T`, s.
    pub period: f64,
    /// CoM height above the stance sole `H`, m.
    pub height: f64,
    pub apex: f64,
    /// Rate of the horizontal smoothing factor `1 − e^{−k τ / T}`.
    pub smoothing: f64,
    /// Nominal lateral distance between the feet, m.
    pub step_width: f64,
    /// Commanded forward speed, m/s.
    pub speed: f64,
    /// Number of steps over which the commanded speed ramps up.
    pub speed_ramp: f64,
    /// Largest horizontal distance of a foot target from the stance foot, m.
    pub reach: f64,
    pub profile: SwingProfile,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            period: 0.35,
            height: 0.9,
            apex: 0.08,
            smoothing: 5.0,
            step_width: 0.16,
            speed: 0.2,
            speed_ramp: 4.0,
            reach: 0.35,
            profile: SwingProfile::HalfSine,
        }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.period > 0.0
            && self.height > 0.0
            && self.apex >= 0.0
            && self.smoothing > 0.0
            && self.step_width >= 0.0
            && self.reach > 0.0
            && self.speed.is_finite()
            && self.speed_ramp >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Scenario("gait: period, height, smoothing and reach must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// `+1` for the left foot, which sits at positive `y`.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

/// Desired swing-foot position with its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FootTarget {
    pub x: f64,
    pub y: f64,
    pub provider: String,
    /// The raw target lay outside the reach disc and was pulled back onto it.
    pub clamped: bool,
}

impl FootTarget {
    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Swing reference over one step of period `params.period`. `start` holds the lift-off
/// position; its `z` is the ground height.
pub fn swing_reference(tau: f64, params: &GaitParams, start: &Vector3<f64>, target: &FootTarget) -> SwingSample {
    swing_reference_over(tau, params.period, params, start, target)
}

/// As [`swing_reference`] for a step of arbitrary duration. `τ` is clamped to the step.
pub fn swing_reference_over(
    tau: f64,
    duration: f64,
    params: &GaitParams,
    start: &Vector3<f64>,
    target: &FootTarget,
) -> SwingSample {
    let tau = tau.clamp(0.0, duration);
    let k = params.smoothing / duration;
    let e = (-k * tau).exp();
    let (s, sd, sdd) = (1.0 - e, k * e, -k * k * e);
    let delta = target.xy() - start.xy();
    let w = match params.profile {
        SwingProfile::FullSine => 2.0 * std::f64::consts::PI / duration,
        SwingProfile::HalfSine => std::f64::consts::PI / duration,
    };
    let (sin, cos) = (w * tau).sin_cos();
    SwingSample {
        position: Vector3::new(start.x + s * delta.x, start.y + s * delta.y, start.z + params.apex * sin),
        velocity: Vector3::new(sd * delta.x, sd * delta.y, params.apex * w * cos),
        acceleration: Vector3::new(sdd * delta.x, sdd * delta.y, -params.apex * w * w * sin),
    }
}

/// Natural frequency `√(g / H)` of the linear inverted pendulum.
pub fn lip_omega(gravity: f64, height: f64) -> f64 {
    (gravity / height).sqrt()
}

/// Pendulum state after `t` seconds, positions relative to the pivot.
pub fn lip_predict(x: f64, v: f64, omega: f64, t: f64) -> (f64, f64) {
    let (c, s) = ((omega * t).cosh(), (omega * t).sinh());
    (x * c + v * s / omega, x * omega * s + v * c)
}

/// Measured pendulum state used by foot-placement providers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepState {
    pub com: Vector2<f64>,
    /// Pendulum velocity `(L_y, −L_x) / (m H)` from the angular momentum about the
    /// stance point. Equals the CoM velocity when the bodies carry no spin.
    pub com_velocity: Vector2<f64>,
    pub stance: Vector2<f64>,
    pub stance_side: Side,
    /// Time left until touchdown.
    pub remaining: f64,
    /// Commanded forward speed for the coming step.
    pub speed: f64,
    pub omega: f64,
}

pub trait FootPlacement {
    fn name(&self) -> &str;
    /// Raw world-frame target before the reach check.
    fn place(&self, params: &GaitParams, state: &StepState) -> Vector2<f64>;
}

/// One-step deadbeat placement: the next step ends on the periodic orbit of the commanded
/// speed and step width.
#[derive(Debug, Clone, Copy, Default)]
pub struct Deadbeat;

impl FootPlacement for Deadbeat {
    fn name(&self) -> &str {
        "deadbeat"
    }

    fn place(&self, params: &GaitParams, s: &StepState) -> Vector2<f64> {
        let w = s.omega;
        let t = params.period;
        let half = 0.5 * w * t;
        let rel = s.com - s.stance;
        let (xe, vxe) = lip_predict(rel.x, s.com_velocity.x, w, s.remaining);
        let (ye, vye) = lip_predict(rel.y, s.com_velocity.y, w, s.remaining);
        // End-of-step velocities of the periodic orbit. The next stance foot is the
        // current swing foot, and the CoM leaves it at the end of its step.
        let vx_goal = w * s.speed * t * 0.5 / half.tanh();
        let next = s.stance_side.other();
        let vy_goal = -next.sign() * 0.5 * params.step_width * w * half.tanh();
        let coth = 1.0 / (w * t).tanh();
        let sinh = (w * t).sinh();
        let px = xe + vxe * coth / w - vx_goal / (w * sinh);
        let py = ye + vye * coth / w - vy_goal / (w * sinh);
        s.stance + Vector2::new(px, py)
    }
}

/// Ask `provider` for a target and clamp it to the reach disc around the stance foot.
pub fn foot_target(provider: &dyn FootPlacement, params: &GaitParams, state: &StepState) -> FootTarget {
    let raw = provider.place(params, state);
    let offset = raw - state.stance;
    let (p, clamped) = if offset.norm() > params.reach {
        (state.stance + offset * (params.reach / offset.norm()), true)
    } else {
        (raw, false)
    };
    FootTarget { x: p.x, y: p.y, provider: provider.name().to_string(), clamped }
}

/// Frames the walking stack refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitFrames {
    pub torso: FrameId,
    pub left: FrameId,
    pub right: FrameId,
}

impl GaitFrames {
    pub fn sole(&self, side: Side) -> FrameId {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }
}

/// Task weights of the walking stacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitWeights {
    pub com: f64,
    pub torso: f64,
    pub swing: f64,
    pub swing_orientation: f64,
    /// Weight of the horizontal CoM task that holds the stance pendulum to the LIP model.
    /// Zero leaves the horizontal CoM free.
    pub lip: f64,
    pub kp: f64,
    pub kd: f64,
    pub swing_kp: f64,
    pub swing_kd: f64,
}

impl Default for GaitWeights {
    fn default() -> Self {
        GaitWeights {
            com: 10.0,
            torso: 10.0,
            swing: 10.0,
            swing_orientation: 5.0,
            lip: 10.0,
            kp: 100.0,
            kd: 20.0,
            swing_kp: 400.0,
            swing_kd: 40.0,
        }
    }
}

fn direct(value: &[f64], rate: &[f64], accel: &[f64]) -> Reference {
    Reference::Direct(ReferenceSample {
        value: DVector::from_column_slice(value),
        rate: DVector::from_column_slice(rate),
        accel: DVector::from_column_slice(accel),
    })
}

/// Single-support outputs `[z_CoM; θ_torso; p_swing; θ_swing]`. With `planar`, only the
/// sagittal components `[z_CoM; pitch_torso; x_swing; z_swing]` remain.
pub fn alip_output_stack(
    frames: &GaitFrames,
    swing: Side,
    com_height: f64,
    reference: &SwingSample,
    weights: &GaitWeights,
    planar: bool,
) -> Result<Vec<TaskSpec>> {
    let (ori_axes, pos_axes): (Vec<usize>, Vec<usize>) = if planar { (vec![1], vec![0, 2]) } else { (vec![0, 1, 2], vec![0, 1, 2]) };
    let pick = |v: &Vector3<f64>| pos_axes.iter().map(|&a| v[a]).collect::<Vec<f64>>();
    let zeros = vec![0.0; ori_axes.len()];
    let mut tasks = vec![
        TaskSpec::new("com-height", TaskKind::ComHeight, direct(&[com_height], &[0.0], &[0.0]))?
            .with_gains(weights.kp, weights.kd)
            .with_weight(weights.com),
        TaskSpec::new(
            "torso",
            TaskKind::FrameOrientation { frame: frames.torso, axes: ori_axes.clone() },
            direct(&zeros, &zeros, &zeros),
        )?
        .with_gains(weights.kp, weights.kd)
        .with_weight(weights.torso),
        TaskSpec::new(
            "swing",
            TaskKind::FramePosition { frame: frames.sole(swing), axes: pos_axes.clone() },
            direct(&pick(&reference.position), &pick(&reference.velocity), &pick(&reference.acceleration)),
        )?
        .with_gains(weights.swing_kp, weights.swing_kd)
        .with_weight(weights.swing),
    ];
    if !planar {
        tasks.push(
            TaskSpec::new(
                "swing-orientation",
                TaskKind::FrameOrientation { frame: frames.sole(swing), axes: ori_axes },
                direct(&zeros, &zeros, &zeros),
            )?
            .with_gains(weights.swing_kp, weights.swing_kd)
            .with_weight(weights.swing_orientation),
        );
    }
    Ok(tasks)
}

/// Horizontal CoM task whose acceleration reference is the LIP acceleration about the
/// stance point, `ω² (c − p)`. Position and rate references equal the current state.
pub fn lip_task(com: &Vector2<f64>, com_velocity: &Vector2<f64>, stance: &Vector2<f64>, omega: f64, weight: f64) -> Result<TaskSpec> {
    let accel = (com - stance) * (omega * omega);
    Ok(TaskSpec::new("com-lip", TaskKind::ComPosition { axes: vec![0, 1] }, direct(com.as_slice(), com_velocity.as_slice(), accel.as_slice()))?
        .with_gains(0.0, 0.0)
        .with_weight(weight))
}

/// Double-support outputs `[p_CoM; θ_torso]`.
pub fn double_support_stack(
    frames: &GaitFrames,
    com: &[Vector3<f64>; 3],
    weights: &GaitWeights,
) -> Result<Vec<TaskSpec>> {
    let z = [0.0; 3];
    Ok(vec![
        TaskSpec::new(
            "com",
            TaskKind::ComPosition { axes: vec![0, 1, 2] },
            direct(com[0].as_slice(), com[1].as_slice(), com[2].as_slice()),
        )?
        .with_gains(weights.kp, weights.kd)
        .with_weight(weights.com),
        TaskSpec::new("torso", TaskKind::FrameOrientation { frame: frames.torso, axes: vec![0, 1, 2] }, direct(&z, &z, &z))?
            .with_gains(weights.kp, weights.kd)
            .with_weight(weights.torso),
    ])
}

/// Where the walker is in its schedule at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    /// Initial weight shift onto the first stance foot; `sigma ∈ [0, 1]`.
    DoubleSupport { sigma: f64 },
    SingleSupport { step: usize, stance: Side, tau: f64, duration: f64 },
}

/// Step timing: a weight shift of `shift` seconds, a half step that starts at the
/// pendulum apex, then full steps of period `T` alternating stance feet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub shift: f64,
    pub period: f64,
    pub first_stance: Side,
}

impl Schedule {
    pub fn step_duration(&self, step: usize) -> f64 {
        if step == 0 {
            0.5 * self.period
        } else {
            self.period
        }
    }

    /// Start time of `step`.
    pub fn step_start(&self, step: usize) -> f64 {
        if step == 0 {
            self.shift
        } else {
            self.shift + self.period * (step as f64 - 0.5)
        }
    }

    pub fn stance(&self, step: usize) -> Side {
        if step % 2 == 0 {
            self.first_stance
        } else {
            self.first_stance.other()
        }
    }

    pub fn phase(&self, t: f64) -> Phase {
        if t < self.shift {
            return Phase::DoubleSupport { sigma: (t / self.shift).clamp(0.0, 1.0) };
        }
        let since = t - self.shift;
        let step = if since < 0.5 * self.period {
            0
        } else {
            ((since - 0.5 * self.period) / self.period).floor() as usize + 1
        };
        let duration = self.step_duration(step);
        Phase::SingleSupport { step, stance: self.stance(step), tau: t - self.step_start(step), duration }
    }
}

/// Cubic smooth step with its first two derivatives in `σ`.
pub fn smooth_step(sigma: f64) -> [f64; 3] {
    let s = sigma.clamp(0.0, 1.0);
    [s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s), 6.0 - 12.0 * s]
}

/// Lateral CoM offset from the stance foot at the apex of the periodic orbit.
pub fn apex_offset(params: &GaitParams, omega: f64) -> f64 {
    0.5 * params.step_width / (0.5 * omega * params.period).cosh()
}

/// Walking state owned by the scenario runner.
#[derive(Debug, Clone)]
pub struct Walker {
    pub params: GaitParams,
    pub weights: GaitWeights,
    pub schedule: Schedule,
    pub frames: GaitFrames,
    pub omega: f64,
    /// CoM at the start of the weight shift and its end point.
    shift_from: Vector3<f64>,
    shift_to: Vector3<f64>,
    /// Step whose swing currently runs, with its lift-off point.
    current: Option<(usize, Vector3<f64>)>,
    pub last_target: Option<FootTarget>,
    pub ground: f64,
}

/// Per-tick walking output.
#[derive(Debug, Clone)]
pub struct WalkTick {
    pub phase: Phase,
    pub tasks: Vec<TaskSpec>,
    pub swing: Option<SwingSample>,
    pub target: Option<FootTarget>,
}

impl Walker {
    pub fn new(
        model: &RobotModel,
        kin: &Kinematics,
        params: GaitParams,
        weights: GaitWeights,
        frames: GaitFrames,
        shift: f64,
        first_stance: Side,
    ) -> Result<Self> {
        params.validate()?;
        if !(shift > 0.0) {
            return Err(Error::Scenario("gait: weight-shift duration must be positive".into()));
        }
        let omega = lip_omega(model.gravity, params.height);
        let stance = kin.frame_pose(model, frames.sole(first_stance))?.position;
        let other = kin.frame_pose(model, frames.sole(first_stance.other()))?.position;
        let ground = 0.5 * (stance.z + other.z);
        let com = kin.com_position(model);
        let mid = 0.5 * (stance + other);
        let lateral = first_stance.sign() * (0.5 * params.step_width - apex_offset(&params, omega));
        let shift_to = Vector3::new(stance.x, mid.y + lateral, ground + params.height);
        Ok(Walker {
            params,
            weights,
            schedule: Schedule { shift, period: params.period, first_stance },
            frames,
            omega,
            shift_from: com,
            shift_to,
            current: None,
            last_target: None,
            ground,
        })
    }

    /// Commanded forward speed during `step`.
    pub fn speed(&self, step: usize) -> f64 {
        let ramp = if self.params.speed_ramp > 0.0 { ((step as f64) / self.params.speed_ramp).min(1.0) } else { 1.0 };
        self.params.speed * ramp
    }

    /// Tasks and references for time `t`.
    pub fn tick(&mut self, model: &RobotModel, kin: &Kinematics, t: f64) -> Result<WalkTick> {
        match self.schedule.phase(t) {
            phase @ Phase::DoubleSupport { sigma } => {
                let [s, sd, sdd] = smooth_step(sigma);
                let span = self.schedule.shift;
                let d = self.shift_to - self.shift_from;
                let com = [self.shift_from + d * s, d * (sd / span), d * (sdd / (span * span))];
                Ok(WalkTick { phase, tasks: double_support_stack(&self.frames, &com, &self.weights)?, swing: None, target: None })
            }
            phase @ Phase::SingleSupport { step, stance, tau, duration } => {
                let swing_side = stance.other();
                let lift = match self.current {
                    Some((k, p)) if k == step => p,
                    _ => {
                        let mut p = kin.frame_pose(model, self.frames.sole(swing_side))?.position;
                        p.z = self.ground;
                        self.current = Some((step, p));
                        p
                    }
                };
                let stance_pos = kin.frame_pose(model, self.frames.sole(stance))?.position;
                let com = kin.com_position(model);
                let momentum = kin.angular_momentum(model, &stance_pos);
                let scale = model.total_mass() * (com.z - stance_pos.z).max(1e-3);
                let state = StepState {
                    com: com.xy(),
                    com_velocity: Vector2::new(momentum.y, -momentum.x) / scale,
                    stance: stance_pos.xy(),
                    stance_side: stance,
                    remaining: (duration - tau).max(0.0),
                    speed: self.speed(step + 1),
                    omega: self.omega,
                };
                let target = foot_target(&Deadbeat, &self.params, &state);
                let mut start = lift;
                start.z = stance_pos.z;
                let reference = swing_reference_over(tau, duration, &self.params, &start, &target);
                let mut tasks = alip_output_stack(
                    &self.frames,
                    swing_side,
                    stance_pos.z + self.params.height,
                    &reference,
                    &self.weights,
                    false,
                )?;
                if self.weights.lip > 0.0 {
                    tasks.push(lip_task(&state.com, &state.com_velocity, &state.stance, self.omega, self.weights.lip)?);
                }
                self.last_target = Some(target.clone());
                Ok(WalkTick { phase, tasks, swing: Some(reference), target: Some(target) })
            }
        }
    }
}
