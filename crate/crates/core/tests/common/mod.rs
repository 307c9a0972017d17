#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wbc_core::multibody::{forward_kinematics, FrameId, RobotModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random configuration, keeping any spatial-base pitch away from gimbal lock.
pub fn random_configuration(rng: &mut ChaCha8Rng, model: &RobotModel) -> DVector<f64> {
    let mut q = random_vector(rng, model.n(), 1.0);
    if let Some(i) = model.base_pitch_index() {
        q[i] = q[i].clamp(-1.0, 1.0);
    }
    q
}

pub fn vee(w: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(w[(2, 1)] - w[(1, 2)], w[(0, 2)] - w[(2, 0)], w[(1, 0)] - w[(0, 1)]) * 0.5
}

/// Central-difference 6 × n frame Jacobian: linear rows from positions, angular rows
/// from `Ṙ Rᵀ`.
pub fn fd_frame_jacobian(model: &RobotModel, q: &DVector<f64>, frame: FrameId, eps: f64) -> DMatrix<f64> {
    let n = model.n();
    let r0 = forward_kinematics(model, q, frame).unwrap().rotation;
    let mut jac = DMatrix::zeros(6, n);
    for i in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += eps;
        qm[i] -= eps;
        let fp = forward_kinematics(model, &qp, frame).unwrap();
        let fm = forward_kinematics(model, &qm, frame).unwrap();
        let dp = (fp.position - fm.position) / (2.0 * eps);
        let dr = (fp.rotation - fm.rotation) / (2.0 * eps);
        let w = vee(&(dr * r0.transpose()));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&dp);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&w);
    }
    jac
}

/// Relative error measure used by the finite-difference checks.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Random symmetric positive definite matrix with eigenvalues in `[0.1, 10]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Saddle-point solve `[H Aᵀ; A 0] [x; μ] = [−g; b]`.
pub fn kkt_oracle(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = g.len();
    let m = a.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    k.view_mut((n, 0), (m, n)).copy_from(a);
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-g));
    rhs.rows_mut(n, m).copy_from(b);
    let svd = k.svd(true, true);
    if svd.singular_values.min() < 1e-10 * svd.singular_values.max() {
        return None;
    }
    let sol = svd.solve(&rhs, 0.0).ok()?;
    Some(sol.rows(0, n).into_owned())
}

/// Exhaustive active-set enumeration for `A_in x ≤ b_in` plus equalities: the unique
/// subset whose equality-constrained solution is primal feasible with nonnegative
/// multipliers.
pub fn brute_force_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = g.len();
    let me = a_eq.nrows();
    let mi = a_in.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << mi) {
        let rows: Vec<usize> = (0..mi).filter(|j| mask & (1 << j) != 0).collect();
        if me + rows.len() > n {
            continue;
        }
        let mut a = DMatrix::zeros(me + rows.len(), n);
        let mut b = DVector::zeros(me + rows.len());
        a.rows_mut(0, me).copy_from(a_eq);
        b.rows_mut(0, me).copy_from(b_eq);
        for (k, &j) in rows.iter().enumerate() {
            a.row_mut(me + k).copy_from(&a_in.row(j));
            b[me + k] = b_in[j];
        }
        let Some(x) = kkt_oracle(h, g, &a, &b) else { continue };
        if (a_in * &x - b_in).max() > 1e-9 {
            continue;
        }
        // Multipliers from the stationarity condition restricted to the chosen rows.
        let grad = h * &x + g;
        let mult = a.transpose().svd(true, true).solve(&(-grad), 1e-12).ok()?;
        if rows.iter().enumerate().any(|(k, _)| mult[me + k] < -1e-9) {
            continue;
        }
        let f = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}
