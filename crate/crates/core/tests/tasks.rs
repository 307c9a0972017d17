mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use wbc_core::multibody::{builtin_model, Kinematics};
use wbc_core::tasks::*;
use wbc_core::Error;

fn constant(values: &[f64]) -> Reference {
    Reference::Signals(values.iter().map(|&v| Signal::Constant { value: v }).collect())
}

#[test]
fn squat_reference_starts_at_base() {
    let s = Signal::Squat { base: 1.0, depth: 0.12, amplitude: 0.03 };
    assert_eq!(s.sample(0.0).unwrap()[0], 1.0);
    let t: f64 = 2.5;
    let expected = 1.0 - 0.12 * (1.0 - (-t).exp()) + 0.03 * (std::f64::consts::PI * t).sin();
    assert!((s.sample(t).unwrap()[0] - expected).abs() < 1e-15);
}

#[test]
fn bow_reference_peaks_at_three_seconds() {
    let s = Signal::Bow { offset: 0.0, rate: 0.45, peak: 3.0 };
    assert!((s.sample(3.0).unwrap()[0] - 1.35).abs() < 1e-15);
    assert_eq!(s.sample(7.0).unwrap()[0], 0.0);
    assert!((s.sample(1.0).unwrap()[0] - 0.45).abs() < 1e-15);
}

#[test]
fn signal_derivatives_match_differences() {
    let signals = [
        Signal::Sinusoid { offset: 0.1, amplitude: 0.3, omega: std::f64::consts::PI / 5.0, phase: 0.2 },
        Signal::Squat { base: 0.55, depth: 0.12, amplitude: 0.03 },
    ];
    let h = 1e-5;
    for s in &signals {
        for t in [0.3, 1.7, 4.2] {
            let [_, d, dd] = s.sample(t).unwrap();
            let [yp, dp, _] = s.sample(t + h).unwrap();
            let [ym, dm, _] = s.sample(t - h).unwrap();
            assert!(((yp - ym) / (2.0 * h) - d).abs() < 1e-8);
            assert!(((dp - dm) / (2.0 * h) - dd).abs() < 1e-7);
        }
    }
}

#[test]
fn sampled_reference_interpolates_and_differentiates() {
    let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
    let values: Vec<f64> = times.iter().map(|t| 2.0 * t).collect();
    let s = Signal::Sampled { times, values };
    let [y, d, dd] = s.sample(0.505).unwrap();
    assert!((y - 1.01).abs() < 1e-12);
    assert!((d - 2.0).abs() < 1e-9);
    assert!(dd.abs() < 1e-6);
    assert_eq!(s.sample(1.5), Err(Error::ReferenceUndefined(1.5)));
}

#[test]
fn zero_error_leaves_velocity_term() {
    let m = builtin_model("dpend").unwrap();
    let q = DVector::from_vec(vec![0.3, -0.2]);
    let qd = DVector::from_vec(vec![0.5, 0.1]);
    let tip = m.frame_id("tip").unwrap();
    let kin = Kinematics::new(&m, &q, None);
    let p = kin.frame_pose(&m, tip).unwrap().position;
    let task = TaskSpec::new("tip", TaskKind::FramePosition { frame: tip, axes: vec![0, 2] }, constant(&[p.x, p.z])).unwrap();
    let (y, ydot) = task_error(&task, &m, 0.0, &q, &qd).unwrap();
    assert!(y.amax() < 1e-15);
    let jac = wbc_core::multibody::frame_jacobian(&m, &q, tip).unwrap();
    assert!((ydot[0] - (jac.row(0) * &qd)[0]).abs() < 1e-15);
    assert!((ydot[1] - (jac.row(2) * &qd)[0]).abs() < 1e-15);
}

#[test]
fn servo_targets() {
    let m = builtin_model("dpend").unwrap();
    let q = DVector::from_vec(vec![0.3, -0.2]);
    let task = TaskSpec::new("joints", TaskKind::JointSubset { joints: vec![0, 1] }, constant(&[0.3, -0.2])).unwrap();
    assert_eq!(task_servo(&task, &m, 0.0, &q, &DVector::zeros(2)).unwrap(), DVector::zeros(2));
    let task = TaskSpec::new("joints", TaskKind::JointSubset { joints: vec![0, 1] }, constant(&[0.2, -0.2]))
        .unwrap()
        .with_gains(49.0, 14.0);
    let ys = task_servo(&task, &m, 0.0, &q, &DVector::zeros(2)).unwrap();
    assert!((ys[0] + 49.0 * 0.1).abs() < 1e-12 && ys[1] == 0.0);
}

#[test]
fn task_jacobians_and_drift_match_differences() {
    let m = builtin_model("biped5").unwrap();
    let torso = m.frame_id("torso").unwrap();
    let sole = m.frame_id("l_sole").unwrap();
    let kinds = vec![
        TaskKind::FrameOrientation { frame: torso, axes: vec![0, 1, 2] },
        TaskKind::FrameOrientation { frame: sole, axes: vec![0, 1, 2] },
        TaskKind::FramePosition { frame: sole, axes: vec![0, 1, 2] },
        TaskKind::ComPosition { axes: vec![0, 1, 2] },
        TaskKind::ComHeight,
        TaskKind::JointSubset { joints: vec![6, 9] },
    ];
    let mut r = rng(31);
    for kind in kinds {
        let task = TaskSpec::new("t", kind.clone(), constant(&vec![0.0; kind.dim()])).unwrap();
        for _ in 0..5 {
            let mut q = random_configuration(&mut r, &m);
            q.rows_mut(6, 12).scale_mut(0.5);
            let qd = random_vector(&mut r, m.n(), 1.0);
            let out = |q: &DVector<f64>| task.output(&m, &Kinematics::new(&m, q, None)).unwrap();
            let o = task.output(&m, &Kinematics::new(&m, &q, Some(&qd))).unwrap();
            let eps = 1e-6;
            let mut fd = DMatrix::zeros(kind.dim(), m.n());
            for i in 0..m.n() {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += eps;
                qm[i] -= eps;
                fd.column_mut(i).copy_from(&((out(&qp).value - out(&qm).value) / (2.0 * eps)));
            }
            assert!(rel_err(&o.jacobian, &fd) < 1e-5, "{kind:?}");
            let h = 1e-6;
            let jdq = (out(&(&q + &qd * h)).jacobian - out(&(&q - &qd * h)).jacobian) / (2.0 * h) * &qd;
            assert!((&o.jdot_qdot - &jdq).amax() < 1e-4 * jdq.amax().max(1.0), "{kind:?}");
        }
    }
}

#[test]
fn stacking_preserves_declaration_order() {
    let m = builtin_model("biped5").unwrap();
    let q = m.zero_configuration();
    let kin = Kinematics::new(&m, &q, Some(&DVector::zeros(m.n())));
    let torso = m.frame_id("torso").unwrap();
    let tasks = vec![
        TaskSpec::new("com", TaskKind::ComPosition { axes: vec![0, 1, 2] }, constant(&[0.0, 0.0, 0.5])).unwrap().with_weight(3.0),
        TaskSpec::new("torso", TaskKind::FrameOrientation { frame: torso, axes: vec![0, 1, 2] }, constant(&[0.0; 3])).unwrap(),
        TaskSpec::new("arms", TaskKind::JointSubset { joints: vec![6] }, constant(&[0.0])).unwrap(),
    ];
    let stack = stack_tasks(&tasks, &m, &kin, 0.0).unwrap();
    assert_eq!(stack.rows(), 7);
    assert_eq!(stack.weights.rows(0, 3), DVector::from_element(3, 3.0));
    assert_eq!(stack.jacobian.row(6)[6], 1.0);
    let single = stack_tasks(&tasks[2..], &m, &kin, 0.0).unwrap();
    assert_eq!(single.jacobian, stack.jacobian.rows(6, 1));
    assert!(stack_tasks(&[], &m, &kin, 0.0).is_err());
}

#[test]
fn invalid_tasks_are_rejected() {
    let kind = TaskKind::JointSubset { joints: vec![0] };
    assert!(TaskSpec::new("x", kind.clone(), constant(&[0.0, 1.0])).is_err());
    let mut t = TaskSpec::new("x", kind, constant(&[0.0])).unwrap();
    t.kp[0] = 0.0;
    assert!(matches!(t.validated(), Err(Error::InvalidTask { .. })));
}

#[test]
fn orientation_error_wraps() {
    let m = builtin_model("biped5").unwrap();
    let mut q = m.zero_configuration();
    q[3] = 3.1;
    let torso = m.frame_id("torso").unwrap();
    let task = TaskSpec::new("yaw", TaskKind::FrameOrientation { frame: torso, axes: vec![0] }, constant(&[-3.1])).unwrap();
    let (y, _) = task_error(&task, &m, 0.0, &q, &DVector::zeros(m.n())).unwrap();
    assert!((y[0] - (6.2 - 2.0 * std::f64::consts::PI)).abs() < 1e-12);
}
