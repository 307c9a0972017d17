mod common;

use common::*;
use nalgebra::{DVector, Vector3};
use wbc_core::multibody::{
    bias_forces, builtin_model, gravity_vector, loop_residual, mass_matrix, ContactKind, Kinematics, RobotModel, State,
    WeldedContact,
};
use wbc_core::sim::*;
use wbc_core::Error;

fn consistent_fourbar(m: &RobotModel, r: &mut rand_chacha::ChaCha8Rng, scale: f64) -> (DVector<f64>, DVector<f64>) {
    let mut q = random_vector(r, m.n(), scale);
    let mut qd = random_vector(r, m.n(), scale);
    for side in ["l", "r"] {
        let [up, fore, crank] = ["upper", "fore", "crank"].map(|j| m.joint_index(&format!("{side}_{j}")).unwrap());
        q[crank] = q[up] + q[fore];
        qd[crank] = qd[up] + qd[fore];
    }
    (q, qd)
}

fn run(m: &RobotModel, mut s: State, u: &DVector<f64>, cfg: &SimConfig, t_end: f64, mut each: impl FnMut(&State)) -> State {
    let steps = (t_end / cfg.dt).round() as usize;
    for _ in 0..steps {
        s = step(m, &s, u, cfg, &[], &[]).unwrap();
        each(&s);
    }
    s
}

#[test]
fn unconstrained_reduction() {
    let m = builtin_model("dpend").unwrap();
    let mut r = rng(1);
    for _ in 0..20 {
        let q = random_vector(&mut r, 2, 2.0);
        let qd = random_vector(&mut r, 2, 2.0);
        let u = random_vector(&mut r, 2, 10.0);
        let fd = constrained_forward_dynamics(&m, &q, &qd, &u, None, &[], None).unwrap();
        let oracle = mass_matrix(&m, &q).unwrap().lu().solve(&(&u - bias_forces(&m, &q, &qd).unwrap())).unwrap();
        assert!((fd.qddot - oracle).amax() < 1e-10);
        assert_eq!(fd.lambda.len(), 0);
    }
}

#[test]
fn constrained_accelerations_satisfy_the_constraints() {
    let m = builtin_model("fourbar-arm").unwrap();
    let mut r = rng(2);
    for _ in 0..20 {
        let (q, qd) = consistent_fourbar(&m, &mut r, 0.8);
        let u = random_vector(&mut r, m.m(), 5.0);
        let fd = constrained_forward_dynamics(&m, &q, &qd, &u, None, &[], None).unwrap();
        let kin = Kinematics::new(&m, &q, Some(&qd));
        let rows = wbc_core::multibody::constraint_rows(&m, &kin, &qd, &[]).unwrap();
        assert!((&rows.jacobian * &fd.qddot + &rows.jdot_qdot).amax() < 1e-9);
        // Equations of motion with the returned multipliers.
        let res = mass_matrix(&m, &q).unwrap() * &fd.qddot + bias_forces(&m, &q, &qd).unwrap()
            - m.actuation_matrix() * &u
            - rows.jacobian.transpose() * &fd.lambda;
        assert!(res.amax() < 1e-9);
    }
}

#[test]
fn redundant_rows_use_least_squares_multipliers() {
    // A foot welded twice produces a rank-deficient constraint set.
    let m = builtin_model("biped5").unwrap();
    let q = m.zero_configuration();
    let kin = Kinematics::new(&m, &q, None);
    let sole = m.frame_id("l_sole").unwrap();
    let c = WeldedContact { frame: sole, kind: ContactKind::Surface, anchor: kin.frame_pose(&m, sole).unwrap() };
    let u = DVector::zeros(m.m());
    let fd = constrained_forward_dynamics(&m, &q, &DVector::zeros(m.n()), &u, None, &[c.clone(), c], None).unwrap();
    let kin = Kinematics::new(&m, &q, Some(&DVector::zeros(m.n())));
    let j = kin.frame_jacobian(&m, sole).unwrap();
    assert!((j * &fd.qddot).amax() < 1e-8);
    assert!(fd.lambda.iter().all(|v| v.is_finite()));
}

#[test]
fn fourbar_loop_drift_stays_small() {
    let m = builtin_model("fourbar-arm").unwrap();
    let mut r = rng(3);
    let (q, qd) = consistent_fourbar(&m, &mut r, 0.6);
    let cfg = SimConfig::default();
    let mut worst: f64 = 0.0;
    let mut k = 0usize;
    run(&m, State::new(q, qd, 0.0), &DVector::zeros(m.m()), &cfg, 10.0, |s| {
        k += 1;
        if k % 10 == 0 {
            worst = worst.max(loop_residual(&m, &s.q).unwrap().amax());
        }
    });
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn passive_double_pendulum_conserves_energy() {
    let m = builtin_model("dpend").unwrap();
    let q = DVector::from_vec(vec![1.2, -0.7]);
    let qd = DVector::from_vec(vec![0.5, 1.0]);
    let e0 = total_energy(&m, &q, &qd);
    let cfg = SimConfig::default();
    let mut worst: f64 = 0.0;
    run(&m, State::new(q, qd, 0.0), &DVector::zeros(2), &cfg, 5.0, |s| {
        worst = worst.max((total_energy(&m, &s.q, &s.qdot) - e0).abs());
    });
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn rk4_is_fourth_order() {
    let m = builtin_model("dpend").unwrap();
    let s0 = State::new(DVector::from_vec(vec![1.0, 0.5]), DVector::from_vec(vec![0.0, -1.0]), 0.0);
    let u = DVector::zeros(2);
    let at = |dt: f64| {
        let cfg = SimConfig { dt, ..SimConfig::default() };
        run(&m, s0.clone(), &u, &cfg, 1.0, |_| {})
    };
    let reference = at(1e-4);
    let err = |s: State| (s.q - &reference.q).amax();
    let e1 = err(at(0.02));
    let e2 = err(at(0.01));
    let ratio = e1 / e2;
    assert!((12.0..20.0).contains(&ratio), "{ratio}");
}

#[test]
fn semi_implicit_euler_is_first_order() {
    let m = builtin_model("dpend").unwrap();
    let s0 = State::new(DVector::from_vec(vec![1.0, 0.5]), DVector::from_vec(vec![0.0, -1.0]), 0.0);
    let u = DVector::zeros(2);
    let at = |dt: f64, integrator| {
        let cfg = SimConfig { dt, integrator, ..SimConfig::default() };
        run(&m, s0.clone(), &u, &cfg, 1.0, |_| {})
    };
    let reference = at(1e-4, Integrator::Rk4);
    let e1 = (at(2e-3, Integrator::SemiImplicitEuler).q - &reference.q).amax();
    let e2 = (at(1e-3, Integrator::SemiImplicitEuler).q - &reference.q).amax();
    assert!((1.6..2.5).contains(&(e1 / e2)), "{}", e1 / e2);
}

#[test]
fn gravity_compensation_is_a_fixed_point() {
    let m = builtin_model("dpend").unwrap();
    let q = DVector::from_vec(vec![0.8, -0.3]);
    let u = gravity_vector(&m, &q).unwrap();
    let end = run(&m, State::at_rest(q.clone()), &u, &SimConfig::default(), 0.5, |_| {});
    assert!((end.q - q).amax() < 1e-9);
    assert!(end.qdot.amax() < 1e-9);
}

#[test]
fn impact_projection_lands_on_the_constraint_manifold() {
    let m = builtin_model("biped5").unwrap();
    let mut r = rng(6);
    let q = m.zero_configuration() + random_vector(&mut r, m.n(), 0.1);
    let qd = random_vector(&mut r, m.n(), 0.5);
    let kin = Kinematics::new(&m, &q, None);
    let sole = m.frame_id("r_sole").unwrap();
    let c = WeldedContact { frame: sole, kind: ContactKind::Surface, anchor: kin.frame_pose(&m, sole).unwrap() };
    let (after, impulse) = impact_projection(&m, &q, &qd, &[c]).unwrap();
    let j = kin.frame_jacobian(&m, sole).unwrap();
    assert!((&j * &after).amax() < 1e-10);
    assert_eq!(impulse.len(), 6);
    // A plastic impact cannot add kinetic energy.
    assert!(total_energy(&m, &q, &after) <= total_energy(&m, &q, &qd) + 1e-12);
    let (same, _) = impact_projection(&m, &q, &after, &[WeldedContact { frame: sole, kind: ContactKind::Surface, anchor: kin.frame_pose(&m, sole).unwrap() }]).unwrap();
    assert!((same - &after).amax() < 1e-10);
}

#[test]
fn external_force_maps_through_the_jacobian() {
    let m = builtin_model("dpend").unwrap();
    let tip = m.frame_id("tip").unwrap();
    let q = DVector::from_vec(vec![0.0, 0.0]);
    let kin = Kinematics::new(&m, &q, None);
    let f = ExternalForce { frame: tip, force: Vector3::new(2.0, 0.0, 0.0), moment: Vector3::zeros(), start: 1.0, duration: 0.15 };
    let tau = generalized_external_force(&m, &kin, std::slice::from_ref(&f), 1.1).unwrap();
    // Horizontal push at the hanging tip: lever arms 0.9 and 0.4.
    assert!((tau[0] - 2.0 * 0.9).abs() < 1e-12 && (tau[1] - 2.0 * 0.4).abs() < 1e-12);
    assert_eq!(generalized_external_force(&m, &kin, &[f.clone()], 1.15).unwrap(), DVector::zeros(2));
    assert_eq!(generalized_external_force(&m, &kin, &[f], 0.99).unwrap(), DVector::zeros(2));
}

#[test]
fn non_finite_state_is_a_fault() {
    let m = builtin_model("dpend").unwrap();
    let u = DVector::from_vec(vec![f64::NAN, 0.0]);
    let r = step(&m, &State::at_rest(DVector::zeros(2)), &u, &SimConfig::default(), &[], &[]);
    assert!(matches!(r, Err(Error::SimulationFault { .. })));
    assert!(SimConfig { dt: 0.0, ..SimConfig::default() }.validate().is_err());
}

#[test]
fn welded_feet_hold_a_standing_biped() {
    let m = builtin_model("biped5").unwrap();
    let q = m.zero_configuration();
    let kin = Kinematics::new(&m, &q, None);
    let contacts: Vec<WeldedContact> = ["l_sole", "r_sole"]
        .iter()
        .map(|n| {
            let f = m.frame_id(n).unwrap();
            WeldedContact { frame: f, kind: ContactKind::Surface, anchor: kin.frame_pose(&m, f).unwrap() }
        })
        .collect();
    let mut s = State::at_rest(q);
    let u = DVector::zeros(m.m());
    let cfg = SimConfig::default();
    for _ in 0..2000 {
        s = step(&m, &s, &u, &cfg, &contacts, &[]).unwrap();
    }
    let kin = Kinematics::new(&m, &s.q, None);
    for c in &contacts {
        assert!((kin.frame_pose(&m, c.frame).unwrap().position - c.anchor.position).amax() < 1e-6);
    }
}
