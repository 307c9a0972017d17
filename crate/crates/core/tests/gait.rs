use nalgebra::{Vector2, Vector3};
use wbc_core::gait::*;
use wbc_core::multibody::builtin_model;
use wbc_core::tasks::{Reference, TaskKind};

const G: f64 = 9.81;

fn target(x: f64, y: f64) -> FootTarget {
    FootTarget { x, y, provider: "test".into(), clamped: false }
}

fn full_sine() -> GaitParams {
    GaitParams { profile: SwingProfile::FullSine, ..GaitParams::default() }
}

/// Integrate `ẍ = ω² x` with fixed-step RK4.
fn pendulum(x: f64, v: f64, omega: f64, t: f64) -> (f64, f64) {
    let steps = 20_000;
    let h = t / steps as f64;
    let f = |x: f64, v: f64| (v, omega * omega * x);
    let (mut x, mut v) = (x, v);
    for _ in 0..steps {
        let (k1x, k1v) = f(x, v);
        let (k2x, k2v) = f(x + 0.5 * h * k1x, v + 0.5 * h * k1v);
        let (k3x, k3v) = f(x + 0.5 * h * k2x, v + 0.5 * h * k2v);
        let (k4x, k4v) = f(x + h * k3x, v + h * k3v);
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    (x, v)
}

#[test]
fn swing_starts_at_lift_off() {
    let p = full_sine();
    let start = Vector3::new(0.1, -0.2, 0.0);
    let s = swing_reference(0.0, &p, &start, &target(0.4, -0.1));
    assert_eq!(s.position, start);
}

#[test]
fn swing_apex_at_quarter_period() {
    let p = GaitParams { apex: 0.08, ..full_sine() };
    let s = swing_reference(p.period / 4.0, &p, &Vector3::zeros(), &target(0.3, 0.0));
    assert!((s.position.z - 0.08).abs() < 1e-15);
}

#[test]
fn swing_lands_near_target() {
    let p = GaitParams { apex: 0.08, ..full_sine() };
    let s = swing_reference(p.period, &p, &Vector3::zeros(), &target(1.0, 0.5));
    assert!(s.position.z.abs() < 1e-15);
    let frac = 1.0 - (-5.0f64).exp();
    assert!((frac - 0.993262053).abs() < 1e-9);
    assert!((s.position.x - frac).abs() < 1e-14);
    assert!((s.position.y - 0.5 * frac).abs() < 1e-14);
}

#[test]
fn swing_derivatives_match_differences() {
    let h = 1e-6;
    for p in [full_sine(), GaitParams::default()] {
        let start = Vector3::new(0.05, 0.1, 0.02);
        let tgt = target(0.3, 0.12);
        for k in 1..10 {
            let tau = p.period * k as f64 / 10.0;
            let s = swing_reference(tau, &p, &start, &tgt);
            let sp = swing_reference(tau + h, &p, &start, &tgt);
            let sm = swing_reference(tau - h, &p, &start, &tgt);
            assert!(((sp.position - sm.position) / (2.0 * h) - s.velocity).amax() < 1e-7);
            assert!(((sp.velocity - sm.velocity) / (2.0 * h) - s.acceleration).amax() < 1e-5);
        }
    }
}

#[test]
fn swing_time_is_clamped_to_the_step() {
    let p = GaitParams::default();
    let start = Vector3::new(0.0, 0.0, 0.0);
    let tgt = target(0.2, 0.0);
    assert_eq!(swing_reference(-0.1, &p, &start, &tgt), swing_reference(0.0, &p, &start, &tgt));
    assert_eq!(swing_reference(p.period + 1.0, &p, &start, &tgt), swing_reference(p.period, &p, &start, &tgt));
}

#[test]
fn half_sine_clears_the_ground() {
    let p = GaitParams::default();
    for k in 0..=100 {
        let tau = p.period * k as f64 / 100.0;
        assert!(swing_reference(tau, &p, &Vector3::zeros(), &target(0.2, 0.0)).position.z >= 0.0);
    }
}

#[test]
fn pendulum_prediction_matches_integration() {
    let w = lip_omega(G, 0.9);
    assert!((w - (G / 0.9).sqrt()).abs() < 1e-15);
    let (x, v) = lip_predict(0.03, -0.2, w, 0.35);
    let (xr, vr) = pendulum(0.03, -0.2, w, 0.35);
    assert!((x - xr).abs() < 1e-12 && (v - vr).abs() < 1e-12);
}

fn state(com: Vector2<f64>, vel: Vector2<f64>, stance: Vector2<f64>, side: Side, remaining: f64, speed: f64, w: f64) -> StepState {
    StepState { com, com_velocity: vel, stance, stance_side: side, remaining, speed, omega: w }
}

#[test]
fn standstill_target_sits_one_step_width_across() {
    let p = GaitParams { height: 0.54, ..GaitParams::default() };
    let w = lip_omega(G, p.height);
    let a = apex_offset(&p, w);
    let stance = Vector2::new(0.2, 0.08);
    // At the apex of the stepping-in-place orbit the CoM sits `a` toward the other foot.
    let s = state(stance - Vector2::new(0.0, a), Vector2::zeros(), stance, Side::Left, 0.5 * p.period, 0.0, w);
    let t = foot_target(&Deadbeat, &p, &s);
    assert!((t.x - stance.x).abs() < 1e-12);
    assert!((t.y - (stance.y - p.step_width)).abs() < 1e-12);
    assert!(!t.clamped);
    assert_eq!(t.provider, "deadbeat");
}

/// Apply the provider at the given state, finish the step, then run one full step on the
/// new foot. Returns the new foot and the state relative to it at the end.
fn take_step(p: &GaitParams, s: &StepState) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
    let t = foot_target(&Deadbeat, p, s);
    assert!(!t.clamped);
    let rel = s.com - s.stance;
    let (xe, vxe) = pendulum(rel.x, s.com_velocity.x, s.omega, s.remaining);
    let (ye, vye) = pendulum(rel.y, s.com_velocity.y, s.omega, s.remaining);
    let rel = s.stance + Vector2::new(xe, ye) - t.xy();
    let (x1, vx1) = pendulum(rel.x, vxe, s.omega, p.period);
    let (y1, vy1) = pendulum(rel.y, vye, s.omega, p.period);
    (t.xy(), Vector2::new(x1, y1), Vector2::new(vx1, vy1))
}

#[test]
fn deadbeat_converges_to_the_periodic_orbit() {
    let p = GaitParams { height: 0.54, reach: 2.0, ..GaitParams::default() };
    let w = lip_omega(G, p.height);
    let half = 0.5 * w * p.period;
    for (side, com, vel, remaining, speed) in [
        (Side::Left, Vector2::new(0.02, -0.03), Vector2::new(0.1, -0.05), 0.2, 0.2),
        (Side::Right, Vector2::new(-0.01, 0.05), Vector2::new(0.3, 0.1), 0.35, 0.1),
    ] {
        // Symmetric orbit: over each foot the CoM runs from −d/2 to d/2 and ends halfway
        // to the next foot laterally.
        let d = speed * p.period;
        let vx_goal = 0.5 * d * w / half.tanh();
        let vy_goal = |next: Side| -next.sign() * 0.5 * p.step_width * w * half.tanh();
        let stance = Vector2::new(1.0, side.sign() * 0.08);
        let s = state(stance + com, vel, stance, side, remaining, speed, w);
        let (foot, end, end_vel) = take_step(&p, &s);
        let next = side.other();
        // One placement fixes the end-of-step velocity.
        assert!((end_vel.x - vx_goal).abs() < 1e-9);
        assert!((end_vel.y - vy_goal(next)).abs() < 1e-9, "{end_vel}");
        // The second one lands the position on the orbit as well.
        let (com_start, vel_start) = {
            let (x, v) = pendulum(end.x, end_vel.x, w, -p.period);
            let (y, vy) = pendulum(end.y, end_vel.y, w, -p.period);
            (Vector2::new(x, y), Vector2::new(v, vy))
        };
        let s2 = state(foot + com_start, vel_start, foot, next, p.period, speed, w);
        let (_, end2, end_vel2) = take_step(&p, &s2);
        assert!((end2.x - 0.5 * d).abs() < 1e-9, "{end2}");
        assert!((end2.y - next.sign() * 0.5 * p.step_width).abs() < 1e-9, "{end2}");
        assert!((end_vel2.x - vx_goal).abs() < 1e-9);
        assert!((end_vel2.y - vy_goal(next.other())).abs() < 1e-9);
    }
}

#[test]
fn far_targets_are_clamped_to_reach() {
    let p = GaitParams { reach: 0.2, height: 0.54, ..GaitParams::default() };
    let w = lip_omega(G, p.height);
    let stance = Vector2::new(0.0, 0.0);
    let s = state(Vector2::new(0.1, 0.0), Vector2::new(2.0, 0.0), stance, Side::Left, 0.1, 0.2, w);
    let t = foot_target(&Deadbeat, &p, &s);
    assert!(t.clamped);
    assert!((t.xy() - stance).norm() - 0.2 < 1e-12);
}

#[test]
fn schedule_alternates_with_exact_period() {
    let s = Schedule { shift: 0.6, period: 0.35, first_stance: Side::Left };
    assert!(matches!(s.phase(0.3), Phase::DoubleSupport { sigma } if (sigma - 0.5).abs() < 1e-15));
    let Phase::SingleSupport { step, stance, tau, duration } = s.phase(0.7) else { panic!() };
    assert_eq!((step, stance), (0, Side::Left));
    assert!((tau - 0.1).abs() < 1e-12 && (duration - 0.175).abs() < 1e-15);
    for k in 1..30 {
        let start = s.step_start(k);
        assert!((start - (0.6 + 0.175 + 0.35 * (k - 1) as f64)).abs() < 1e-12);
        let Phase::SingleSupport { step, stance, duration, .. } = s.phase(start + 1e-9) else { panic!() };
        assert_eq!(step, k);
        assert_eq!(stance, if k % 2 == 0 { Side::Left } else { Side::Right });
        assert_eq!(duration, 0.35);
    }
}

#[test]
fn smooth_step_endpoints_and_derivative() {
    assert_eq!(smooth_step(0.0), [0.0, 0.0, 6.0]);
    assert_eq!(smooth_step(1.0), [1.0, 0.0, -6.0]);
    let h = 1e-6;
    for s in [0.2, 0.5, 0.9] {
        let d = (smooth_step(s + h)[0] - smooth_step(s - h)[0]) / (2.0 * h);
        assert!((d - smooth_step(s)[1]).abs() < 1e-8);
    }
}

fn frames() -> GaitFrames {
    let m = builtin_model("biped5").unwrap();
    GaitFrames { torso: m.frame_id("torso").unwrap(), left: m.frame_id("l_sole").unwrap(), right: m.frame_id("r_sole").unwrap() }
}

fn dims(tasks: &[wbc_core::tasks::TaskSpec]) -> Vec<(String, usize)> {
    tasks
        .iter()
        .map(|t| {
            let n = match &t.kind {
                TaskKind::ComHeight => 1,
                TaskKind::FrameOrientation { axes, .. } | TaskKind::FramePosition { axes, .. } | TaskKind::ComPosition { axes } => axes.len(),
                TaskKind::JointSubset { joints } => joints.len(),
            };
            (t.name.clone(), n)
        })
        .collect()
}

fn values(r: &Reference) -> Vec<f64> {
    match r {
        Reference::Direct(s) => s.value.iter().copied().collect(),
        _ => panic!("expected a direct reference"),
    }
}

#[test]
fn output_stack_layout() {
    let f = frames();
    let sample = swing_reference(0.1, &GaitParams::default(), &Vector3::zeros(), &target(0.2, 0.1));
    let w = GaitWeights::default();
    let full = alip_output_stack(&f, Side::Right, 0.9, &sample, &w, false).unwrap();
    let names = |v: &[(String, usize)]| v.to_vec();
    assert_eq!(
        names(&dims(&full)),
        vec![("com-height".into(), 1), ("torso".into(), 3), ("swing".into(), 3), ("swing-orientation".into(), 3)]
    );
    assert_eq!(values(&full[0].reference), vec![0.9]);
    assert_eq!(values(&full[1].reference), vec![0.0; 3]);
    assert_eq!(values(&full[3].reference), vec![0.0; 3]);
    assert_eq!(values(&full[2].reference), sample.position.as_slice().to_vec());
    assert!(matches!(full[2].kind, TaskKind::FramePosition { frame, .. } if frame == f.right));

    let planar = alip_output_stack(&f, Side::Left, 0.9, &sample, &w, true).unwrap();
    assert_eq!(names(&dims(&planar)), vec![("com-height".into(), 1), ("torso".into(), 1), ("swing".into(), 2)]);
    assert!(matches!(&planar[1].kind, TaskKind::FrameOrientation { axes, .. } if axes == &vec![1]));
    assert_eq!(values(&planar[2].reference), vec![sample.position.x, sample.position.z]);
}

#[test]
fn lip_task_accelerates_away_from_the_stance_point() {
    let w = lip_omega(G, 0.54);
    let t = lip_task(&Vector2::new(0.1, 0.05), &Vector2::new(0.2, 0.0), &Vector2::new(0.08, 0.1), w, 7.0).unwrap();
    assert_eq!((t.kp.amax(), t.kd.amax(), t.weight.as_slice()), (0.0, 0.0, &[7.0, 7.0][..]));
    let Reference::Direct(s) = &t.reference else { panic!() };
    assert!((s.accel[0] - w * w * 0.02).abs() < 1e-15);
    assert!((s.accel[1] + w * w * 0.05).abs() < 1e-15);
    assert_eq!(s.rate.as_slice(), &[0.2, 0.0]);
}

#[test]
fn invalid_params_are_rejected() {
    assert!(GaitParams { period: 0.0, ..GaitParams::default() }.validate().is_err());
    assert!(GaitParams { height: -1.0, ..GaitParams::default() }.validate().is_err());
    assert!(GaitParams { apex: -0.01, ..GaitParams::default() }.validate().is_err());
    assert!(GaitParams::default().validate().is_ok());
}
