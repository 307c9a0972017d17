mod common;

use std::f64::consts::FRAC_PI_2;

use common::*;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};
use proptest::prelude::*;
use wbc_core::multibody::*;
use wbc_core::Error;

const L1: f64 = 0.5;
const L2: f64 = 0.4;
const M1: f64 = 1.0;
const M2: f64 = 0.8;
const INERTIA: f64 = 1e-4;
const G: f64 = 9.81;

fn dpend() -> RobotModel {
    builtin_model("dpend").unwrap()
}

#[test]
fn dpend_tip_hangs_at_zero() {
    let m = dpend();
    let tip = m.frame_id("tip").unwrap();
    let p = forward_kinematics(&m, &DVector::zeros(2), tip).unwrap().position;
    assert!((p - Vector3::new(0.0, 0.0, -(L1 + L2))).norm() < 1e-15);
}

#[test]
fn dpend_tip_quarter_turn() {
    let m = dpend();
    let tip = m.frame_id("tip").unwrap();
    let p = forward_kinematics(&m, &DVector::from_vec(vec![FRAC_PI_2, 0.0]), tip)
        .unwrap()
        .position;
    assert!((p - Vector3::new(L1 + L2, 0.0, 0.0)).norm() < 1e-15);
}

#[test]
fn unknown_frame_is_reported() {
    let m = dpend();
    assert!(matches!(m.frame_id("nose"), Err(Error::UnknownFrame(_))));
}

fn rot_y_neg(angle: f64) -> Matrix4<f64> {
    // rotation about -y by `angle`
    let (s, c) = angle.sin_cos();
    Matrix4::new(c, 0.0, -s, 0.0, 0.0, 1.0, 0.0, 0.0, s, 0.0, c, 0.0, 0.0, 0.0, 0.0, 1.0)
}

fn translate(x: f64, y: f64, z: f64) -> Matrix4<f64> {
    let mut t = Matrix4::identity();
    t[(0, 3)] = x;
    t[(1, 3)] = y;
    t[(2, 3)] = z;
    t
}

#[test]
fn fourbar_fk_matches_transform_composition() {
    let m = builtin_model("fourbar-arm").unwrap();
    let mut r = rng(11);
    let upper = m.joint_index("l_upper").unwrap();
    let fore = m.joint_index("l_fore").unwrap();
    let crank = m.joint_index("l_crank").unwrap();
    for _ in 0..50 {
        let q = random_configuration(&mut r, &m);
        let fist = translate(0.0, 0.2, 0.0)
            * rot_y_neg(q[upper])
            * translate(0.0, 0.0, -0.3)
            * rot_y_neg(q[fore])
            * Vector4::new(0.0, 0.0, -0.25, 1.0);
        let tip = translate(0.0, 0.2, 0.0) * rot_y_neg(q[crank]) * Vector4::new(0.05, 0.0, 0.0, 1.0);
        let p = forward_kinematics(&m, &q, m.frame_id("l_fist").unwrap()).unwrap().position;
        let c = forward_kinematics(&m, &q, m.frame_id("l_crank_tip").unwrap()).unwrap().position;
        assert!((p - fist.xyz()).norm() < 1e-12);
        assert!((c - tip.xyz()).norm() < 1e-12);
    }
}

#[test]
fn frame_jacobians_match_central_differences() {
    let mut r = rng(3);
    for name in builtin_model_names() {
        let m = builtin_model(name).unwrap();
        for _ in 0..10 {
            let q = random_configuration(&mut r, &m);
            for f in 0..m.frames().len() {
                let id = m.frame_id(&m.frames()[f].name).unwrap();
                let jac = frame_jacobian(&m, &q, id).unwrap();
                let fd = fd_frame_jacobian(&m, &q, id, 1e-6);
                assert!(rel_err(&jac, &fd) < 1e-5, "{name} frame {}", m.frames()[f].name);
            }
        }
    }
}

#[test]
fn world_frame_jacobian_is_zero() {
    let m = builtin_model("fourbar-arm").unwrap();
    let q = DVector::from_element(m.n(), 0.3);
    assert_eq!(frame_jacobian(&m, &q, FrameId::WORLD).unwrap().amax(), 0.0);
    assert_eq!(frame_jacobian(&m, &q, m.frame_id("base").unwrap()).unwrap().amax(), 0.0);
}

#[test]
fn dpend_tip_jacobian_at_zero() {
    let m = dpend();
    let jac = frame_jacobian(&m, &DVector::zeros(2), m.frame_id("tip").unwrap()).unwrap();
    // x = l1 sin q1 + l2 sin(q1 + q2)
    assert!((jac[(0, 0)] - (L1 + L2)).abs() < 1e-15);
    assert!((jac[(0, 1)] - L2).abs() < 1e-15);
}

#[test]
fn jdot_qdot_vanishes_at_rest() {
    let m = builtin_model("biped5").unwrap();
    let mut r = rng(5);
    let q = random_configuration(&mut r, &m);
    let a = jdot_qdot(&m, &q, &DVector::zeros(m.n()), m.frame_id("l_sole").unwrap()).unwrap();
    assert_eq!(a.amax(), 0.0);
}

#[test]
fn jdot_qdot_matches_directional_difference() {
    let mut r = rng(7);
    let h = 1e-6;
    for name in builtin_model_names() {
        let m = builtin_model(name).unwrap();
        for _ in 0..10 {
            let q = random_configuration(&mut r, &m);
            let qd = random_vector(&mut r, m.n(), 1.0);
            for f in m.frames() {
                let id = m.frame_id(&f.name).unwrap();
                let jp = frame_jacobian(&m, &(&q + &qd * h), id).unwrap();
                let jm = frame_jacobian(&m, &(&q - &qd * h), id).unwrap();
                let fd = (jp - jm) / (2.0 * h) * &qd;
                let an = jdot_qdot(&m, &q, &qd, id).unwrap();
                let err = (&an - &fd).amax() / fd.amax().max(1.0);
                assert!(err < 1e-4, "{name}/{}: {err}", f.name);
            }
        }
    }
}

#[test]
fn dpend_centripetal_acceleration() {
    let m = dpend();
    let w = 2.5;
    let a = jdot_qdot(
        &m,
        &DVector::zeros(2),
        &DVector::from_vec(vec![w, 0.0]),
        m.frame_id("tip").unwrap(),
    )
    .unwrap();
    // Circular motion about the pivot: (l1 + l2) ω² directed up the link toward the pivot.
    assert!((a[2] - (L1 + L2) * w * w).abs() < 1e-12);
    assert!(a[0].abs() < 1e-12 && a[1].abs() < 1e-12);
}

#[test]
fn dpend_mass_matrix_lagrangian() {
    let m = dpend();
    for q2 in [0.0, 0.7] {
        let mm = mass_matrix(&m, &DVector::from_vec(vec![0.3, q2])).unwrap();
        // Symbolic Lagrangian of two point masses at the link ends plus rotor inertia.
        let m11 = M1 * L1 * L1 + M2 * (L1 * L1 + L2 * L2 + 2.0 * L1 * L2 * q2.cos()) + 2.0 * INERTIA;
        let m12 = M2 * (L2 * L2 + L1 * L2 * q2.cos()) + INERTIA;
        let m22 = M2 * L2 * L2 + INERTIA;
        assert!((mm[(0, 0)] - m11).abs() < 1e-12);
        assert!((mm[(0, 1)] - m12).abs() < 1e-12);
        assert!((mm[(1, 1)] - m22).abs() < 1e-12);
    }
    let mm = mass_matrix(&m, &DVector::zeros(2)).unwrap();
    assert!((mm[(0, 0)] - (M1 * L1 * L1 + M2 * (L1 + L2).powi(2) + 2.0 * INERTIA)).abs() < 1e-12);
}

#[test]
fn cartpole_cart_inertia_is_total_mass() {
    let m = builtin_model("cartpole").unwrap();
    let mut r = rng(9);
    for _ in 0..20 {
        let q = random_configuration(&mut r, &m);
        assert!((mass_matrix(&m, &q).unwrap()[(0, 0)] - 1.2).abs() < 1e-12);
    }
}

#[test]
fn kinetic_energy_identity_and_symmetry() {
    let mut r = rng(13);
    for name in builtin_model_names() {
        let m = builtin_model(name).unwrap();
        for _ in 0..20 {
            let q = random_configuration(&mut r, &m);
            let qd = random_vector(&mut r, m.n(), 2.0);
            let mm = mass_matrix(&m, &q).unwrap();
            assert_eq!((&mm - mm.transpose()).amax(), 0.0);
            let ke = Kinematics::new(&m, &q, Some(&qd)).kinetic_energy(&m);
            let quad = 0.5 * qd.dot(&(&mm * &qd));
            assert!((ke - quad).abs() <= 1e-10 * ke.abs().max(1e-12), "{name}: {ke} vs {quad}");
            assert!(mm.clone().cholesky().is_some(), "{name}: M not positive definite");
        }
    }
}

#[test]
fn dpend_gravity_terms() {
    let m = dpend();
    assert!(bias_forces(&m, &DVector::zeros(2), &DVector::zeros(2)).unwrap().amax() < 1e-14);
    let g = bias_forces(&m, &DVector::from_vec(vec![FRAC_PI_2, 0.0]), &DVector::zeros(2)).unwrap();
    assert!((g[0] - (M1 * L1 + M2 * (L1 + L2)) * G).abs() < 1e-12);
    assert!((g[1] - M2 * L2 * G).abs() < 1e-12);
}

/// Christoffel-symbol Coriolis matrix from finite differences of `M`.
fn coriolis_oracle(m: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.n();
    let h = 1e-6;
    let dm: Vec<DMatrix<f64>> = (0..n)
        .map(|k| {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            (mass_matrix(m, &qp).unwrap() - mass_matrix(m, &qm).unwrap()) / (2.0 * h)
        })
        .collect();
    let mut c = DMatrix::zeros(n, n);
    let mut mdot = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                c[(i, j)] += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qd[k];
                mdot[(i, j)] += dm[k][(i, j)] * qd[k];
            }
        }
    }
    (c, mdot)
}

#[test]
fn bias_matches_christoffel_coriolis_and_skew_symmetry() {
    let mut r = rng(17);
    for name in ["dpend", "cartpole", "fourbar-arm", "biped5"] {
        let m = builtin_model(name).unwrap();
        for _ in 0..3 {
            let q = random_configuration(&mut r, &m);
            let qd = random_vector(&mut r, m.n(), 1.0);
            let (c, mdot) = coriolis_oracle(&m, &q, &qd);
            let g = gravity_vector(&m, &q).unwrap();
            let bias = bias_forces(&m, &q, &qd).unwrap();
            let expected = &c * &qd + g;
            assert!((&bias - &expected).amax() < 1e-6 * expected.amax().max(1.0), "{name}");
            let n_mat = mdot - 2.0 * c;
            assert!((&n_mat + n_mat.transpose()).amax() < 1e-6, "{name}");
        }
    }
}

#[test]
fn com_single_body_and_mirror_symmetry() {
    let single = ModelBuilder::new("one", BaseType::Fixed)
        .body(BodySpec {
            name: "b".into(),
            parent: None,
            joint: Some(JointSpec::revolute(Vector3::z(), Vector3::new(0.1, 0.2, 0.3))),
            mass: 2.0,
            com: Vector3::new(0.4, 0.0, 0.0),
            inertia: Matrix3::identity() * 1e-2,
        })
        .build()
        .unwrap();
    let q = DVector::from_vec(vec![FRAC_PI_2]);
    let c = com_position(&single, &q).unwrap();
    assert!((c - Vector3::new(0.1, 0.6, 0.3)).norm() < 1e-14);

    let arm = builtin_model("fourbar-arm").unwrap();
    let mut r = rng(19);
    let q = random_configuration(&mut r, &arm);
    let mut mirrored = q.clone();
    for side in ["upper", "fore", "crank"] {
        mirrored[arm.joint_index(&format!("r_{side}")).unwrap()] = q[arm.joint_index(&format!("l_{side}")).unwrap()];
    }
    assert!(com_position(&arm, &mirrored).unwrap().y.abs() < 1e-14);
}

#[test]
fn com_jacobian_matches_central_differences() {
    let mut r = rng(23);
    for name in builtin_model_names() {
        let m = builtin_model(name).unwrap();
        let q = random_configuration(&mut r, &m);
        let jac = com_jacobian(&m, &q).unwrap();
        let mut fd = DMatrix::zeros(3, m.n());
        for i in 0..m.n() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += 1e-6;
            qm[i] -= 1e-6;
            let d = (com_position(&m, &qp).unwrap() - com_position(&m, &qm).unwrap()) / 2e-6;
            fd.column_mut(i).copy_from(&d);
        }
        assert!(rel_err(&jac, &fd) < 1e-5, "{name}");
    }
}

fn consistent_fourbar(r: &mut rand_chacha::ChaCha8Rng, m: &RobotModel) -> DVector<f64> {
    let mut q = random_vector(r, m.n(), 0.8);
    for side in ["l", "r"] {
        let up = q[m.joint_index(&format!("{side}_upper")).unwrap()];
        let fore = q[m.joint_index(&format!("{side}_fore")).unwrap()];
        q[m.joint_index(&format!("{side}_crank")).unwrap()] = up + fore;
    }
    q
}

#[test]
fn fourbar_loop_residual_and_gradient() {
    let m = builtin_model("fourbar-arm").unwrap();
    assert!(loop_residual(&m, &DVector::zeros(m.n())).unwrap().amax() < 1e-15);
    let mut r = rng(29);
    for _ in 0..20 {
        let q = consistent_fourbar(&mut r, &m);
        assert!(loop_residual(&m, &q).unwrap().amax() < 1e-12);
        let jac = loop_jacobian(&m, &q).unwrap();
        let mut fd = DMatrix::zeros(2, m.n());
        for i in 0..m.n() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += 1e-6;
            qm[i] -= 1e-6;
            fd.column_mut(i)
                .copy_from(&((loop_residual(&m, &qp).unwrap() - loop_residual(&m, &qm).unwrap()) / 2e-6));
        }
        assert!(rel_err(&jac, &fd) < 1e-5);

        let qd = random_vector(&mut r, m.n(), 1.0);
        let h = 1e-6;
        let jdot = (loop_jacobian(&m, &(&q + &qd * h)).unwrap() - loop_jacobian(&m, &(&q - &qd * h)).unwrap())
            / (2.0 * h)
            * &qd;
        let an = loop_jdot_qdot(&m, &q, &qd).unwrap();
        assert!((&an - &jdot).amax() < 1e-4 * jdot.amax().max(1.0));
    }
}

#[test]
fn no_closures_gives_empty_rows() {
    let m = dpend();
    assert_eq!(loop_residual(&m, &DVector::zeros(2)).unwrap().len(), 0);
    assert_eq!(loop_jacobian(&m, &DVector::zeros(2)).unwrap().shape(), (0, 2));
}

#[test]
fn coincident_closure_is_singular() {
    let m = ModelBuilder::new("x", BaseType::Fixed)
        .body(BodySpec {
            name: "a".into(),
            parent: None,
            joint: Some(JointSpec::revolute(Vector3::y(), Vector3::zeros())),
            mass: 1.0,
            com: Vector3::zeros(),
            inertia: Matrix3::identity(),
        })
        .frame("p", "a", Vector3::zeros())
        .frame("o", "world", Vector3::zeros())
        .loop_closure("l", "p", "o", 1.0)
        .build()
        .unwrap();
    assert!(matches!(loop_jacobian(&m, &DVector::zeros(1)), Err(Error::SingularClosure(_))));
}

#[test]
fn floating_base_euler_coordinates_orient_the_torso() {
    let m = builtin_model("biped5").unwrap();
    let mut q = DVector::zeros(m.n());
    q[3] = 0.3;
    q[4] = -0.2;
    q[5] = 0.1;
    let pose = forward_kinematics(&m, &q, m.frame_id("torso").unwrap()).unwrap();
    let e = wbc_core::math::euler_zyx(&pose.rotation);
    assert!((e - Vector3::new(0.3, -0.2, 0.1)).norm() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(seed in 0u64..10_000) {
        let m = builtin_model("biped5").unwrap();
        let mut r = rng(seed);
        let q = random_configuration(&mut r, &m);
        let mm = mass_matrix(&m, &q).unwrap();
        prop_assert_eq!((&mm - mm.transpose()).amax(), 0.0);
        prop_assert!(mm.cholesky().is_some());
    }
}
