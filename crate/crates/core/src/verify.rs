//! Self-checks against independent oracles: finite differences, energy conservation,
//! saddle-point solves, active-set enumeration and the torque-space barrier.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::multibody::{
    bias_forces, builtin_model, builtin_model_names, com_position, forward_kinematics, jdot_qdot, loop_jacobian,
    loop_residual, mass_matrix, Kinematics, RobotModel, State,
};
use crate::qp::{solve, QpProblem};
use crate::safety::{aecbf_row, barrier_eval, oracle, validate_poles, BarrierKind, BarrierSpec};
use crate::sim::{step, total_energy, Integrator, SimConfig};

pub const SUITES: &[&str] = &["jacobians", "energy", "qp-kkt", "qp-bruteforce", "ecbf-equivalence", "theorem1"];

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// Worst observed error, or mismatch count for combinatorial checks.
    pub value: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tolerance: f64, samples: usize) -> Self {
        let passed = value.is_finite() && value <= tolerance;
        Check { name: name.into(), value, tolerance, samples, passed }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: &str, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        SuiteReport { suite: suite.to_string(), checks, passed }
    }
}

pub fn run_suite(name: &str) -> Result<SuiteReport> {
    let checks = match name {
        "jacobians" => jacobians()?,
        "energy" => energy()?,
        "qp-kkt" => qp_kkt(200)?,
        "qp-bruteforce" => qp_bruteforce(500)?,
        "ecbf-equivalence" => ecbf_equivalence(1000)?,
        "theorem1" => theorem1(20_000)?,
        other => return Err(Error::Scenario(format!("unknown verification suite '{other}'"))),
    };
    Ok(SuiteReport::new(name, checks))
}

pub fn run_all() -> Result<Vec<SuiteReport>> {
    SUITES.iter().map(|s| run_suite(s)).collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vector(r: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.random_range(-scale..scale))
}

fn random_configuration(r: &mut ChaCha8Rng, model: &RobotModel) -> DVector<f64> {
    let mut q = random_vector(r, model.n(), 1.0);
    if let Some(i) = model.base_pitch_index() {
        q[i] = q[i].clamp(-1.0, 1.0);
    }
    q
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn vee(w: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(w[(2, 1)] - w[(1, 2)], w[(0, 2)] - w[(2, 0)], w[(1, 0)] - w[(0, 1)]) * 0.5
}

/// Central differences of `f` along every coordinate.
fn central_difference(
    q: &DVector<f64>,
    rows: usize,
    eps: f64,
    mut f: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(rows, q.len());
    for i in 0..q.len() {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += eps;
        qm[i] -= eps;
        jac.set_column(i, &((f(&qp)? - f(&qm)?) / (2.0 * eps)));
    }
    Ok(jac)
}

fn jacobians() -> Result<Vec<Check>> {
    const EPS: f64 = 1e-6;
    let mut r = rng(3);
    let mut checks = Vec::new();
    for name in builtin_model_names() {
        let m = builtin_model(name)?;
        let (mut frame_err, mut com_err, mut loop_err, mut drift_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let samples = 10;
        for _ in 0..samples {
            let q = random_configuration(&mut r, &m);
            let qd = random_vector(&mut r, m.n(), 1.0);
            let kin = Kinematics::new(&m, &q, None);
            for f in m.frames() {
                let id = m.frame_id(&f.name)?;
                let jac = kin.frame_jacobian(&m, id)?;
                let r0 = kin.frame_pose(&m, id)?.rotation;
                let mut fd = DMatrix::zeros(6, m.n());
                for i in 0..m.n() {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[i] += EPS;
                    qm[i] -= EPS;
                    let (fp, fm) = (forward_kinematics(&m, &qp, id)?, forward_kinematics(&m, &qm, id)?);
                    let dp = (fp.position - fm.position) / (2.0 * EPS);
                    let w = vee(&((fp.rotation - fm.rotation) / (2.0 * EPS) * r0.transpose()));
                    fd.fixed_view_mut::<3, 1>(0, i).copy_from(&dp);
                    fd.fixed_view_mut::<3, 1>(3, i).copy_from(&w);
                }
                frame_err = frame_err.max(rel_err(&jac, &fd));

                let jp = Kinematics::new(&m, &(&q + &qd * EPS), None).frame_jacobian(&m, id)?;
                let jm = Kinematics::new(&m, &(&q - &qd * EPS), None).frame_jacobian(&m, id)?;
                let fd_drift = (jp - jm) / (2.0 * EPS) * &qd;
                let an = jdot_qdot(&m, &q, &qd, id)?;
                drift_err = drift_err.max((&an - &fd_drift).amax() / fd_drift.amax().max(1.0));
            }
            let fd_com = central_difference(&q, 3, EPS, |x| Ok(DVector::from_column_slice(com_position(&m, x)?.as_slice())))?;
            com_err = com_err.max(rel_err(&kin.com_jacobian(&m), &fd_com));
            if !m.loops().is_empty() {
                let rows = loop_residual(&m, &q)?.len();
                let fd_loop = central_difference(&q, rows, EPS, |x| loop_residual(&m, x))?;
                loop_err = loop_err.max(rel_err(&loop_jacobian(&m, &q)?, &fd_loop));
            }
        }
        let n = samples * m.frames().len();
        checks.push(Check::new(format!("{name}/frame-jacobian"), frame_err, 1e-5, n));
        checks.push(Check::new(format!("{name}/jdot-qdot"), drift_err, 1e-4, n));
        checks.push(Check::new(format!("{name}/com-jacobian"), com_err, 1e-5, samples));
        if !m.loops().is_empty() {
            checks.push(Check::new(format!("{name}/loop-jacobian"), loop_err, 1e-5, samples));
        }
    }
    Ok(checks)
}

fn energy() -> Result<Vec<Check>> {
    let m = builtin_model("dpend")?;
    let cfg = SimConfig { dt: 1e-4, integrator: Integrator::Rk4, ..SimConfig::default() };
    let mut s = State::new(DVector::from_vec(vec![1.2, -0.7]), DVector::from_vec(vec![0.5, 1.0]), 0.0);
    let e0 = total_energy(&m, &s.q, &s.qdot);
    let u = DVector::zeros(m.m());
    let steps = (5.0 / cfg.dt).round() as usize;
    let mut worst = 0.0f64;
    for _ in 0..steps {
        s = step(&m, &s, &u, &cfg, &[], &[])?;
        worst = worst.max((total_energy(&m, &s.q, &s.qdot) - e0).abs());
    }
    Ok(vec![Check::new("dpend/energy-drift-5s", worst, 1e-4, steps)])
}

fn random_spd(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| r.random_range(0.1..10.0)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

fn random_problem(r: &mut ChaCha8Rng, n: usize, me: usize, mi: usize) -> QpProblem {
    let h = random_spd(r, n);
    let g = random_vector(r, n, 2.0);
    let a_eq = DMatrix::from_fn(me, n, |_, _| r.random_range(-1.0..1.0));
    let x_feas = random_vector(r, n, 1.0);
    let b_eq = &a_eq * &x_feas;
    let a_in = DMatrix::from_fn(mi, n, |_, _| r.random_range(-1.0..1.0));
    let slack = DVector::from_fn(mi, |_, _| r.random_range(0.0..0.5));
    let b_in = &a_in * &x_feas + slack;
    QpProblem::unconstrained(h, g).with_equalities(a_eq, b_eq).with_inequalities(a_in, b_in)
}

/// Saddle-point solve `[H Aᵀ; A 0] [x; μ] = [−g; b]`.
fn kkt_solve(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let (n, m) = (g.len(), a.nrows());
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
    Some(svd.solve(&rhs, 0.0).ok()?.rows(0, n).into_owned())
}

/// Lowest-cost candidate among all active sets that is primal feasible with
/// nonnegative multipliers.
fn enumerate_active_sets(p: &QpProblem) -> Option<DVector<f64>> {
    let (n, me, mi) = (p.dim(), p.a_eq.nrows(), p.a_in.nrows());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << mi) {
        let rows: Vec<usize> = (0..mi).filter(|j| mask & (1 << j) != 0).collect();
        if me + rows.len() > n {
            continue;
        }
        let mut a = DMatrix::zeros(me + rows.len(), n);
        let mut b = DVector::zeros(me + rows.len());
        a.rows_mut(0, me).copy_from(&p.a_eq);
        b.rows_mut(0, me).copy_from(&p.b_eq);
        for (k, &j) in rows.iter().enumerate() {
            a.row_mut(me + k).copy_from(&p.a_in.row(j));
            b[me + k] = p.b_in[j];
        }
        let Some(x) = kkt_solve(&p.h, &p.g, &a, &b) else { continue };
        if mi > 0 && (&p.a_in * &x - &p.b_in).max() > 1e-9 {
            continue;
        }
        let grad = &p.h * &x + &p.g;
        if a.nrows() == 0 {
            best = best.or(Some((p.objective(&x), x)));
            continue;
        }
        let Ok(mult) = a.transpose().svd(true, true).solve(&(-grad), 1e-12) else { continue };
        if (0..rows.len()).any(|k| mult[me + k] < -1e-9) {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}

fn qp_kkt(instances: usize) -> Result<Vec<Check>> {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 4 + k % 9;
        let me = 1 + k % n.min(5);
        let p = random_problem(&mut r, n, me, 0);
        let sol = solve(&p, None)?;
        let err = match kkt_solve(&p.h, &p.g, &p.a_eq, &p.b_eq) {
            Some(x) if sol.is_optimal() => (&sol.x - x).amax(),
            _ => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    Ok(vec![Check::new("equality-only-vs-saddle-point", worst, 1e-10, instances)])
}

fn qp_bruteforce(instances: usize) -> Result<Vec<Check>> {
    let mut r = rng(13);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 6 + k % 3;
        let me = k % 3;
        let mi = 1 + k % 12;
        let p = random_problem(&mut r, n, me, mi);
        let sol = solve(&p, None)?;
        let err = match enumerate_active_sets(&p) {
            Some(x) if sol.is_optimal() => (&sol.x - x).amax(),
            _ => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    Ok(vec![Check::new("active-set-enumeration", worst, 1e-8, instances)])
}

/// Track a random torque target under a tip barrier, once over `u` with the torque-space
/// row and once over `q̈` with the acceleration row.
fn ecbf_equivalence(states: usize) -> Result<Vec<Check>> {
    let m = builtin_model("dpend")?;
    let tip = m.frame_id("tip")?;
    let spec = BarrierSpec::new("tip", BarrierKind::FrameCoordinate { frame: tip, axis: 0, sign: -1.0, threshold: -0.6 }, vec![3.0, 8.0])?;
    let mut r = rng(5);
    let (mut worst, mut active) = (0.0f64, 0usize);
    let n = m.n();
    for _ in 0..states {
        let q = random_vector(&mut r, n, 1.5);
        let qd = random_vector(&mut r, n, 2.0);
        let target = random_vector(&mut r, n, 40.0);
        let e = barrier_eval(&spec, &m, &q, &qd)?;
        let acc = aecbf_row(&spec, &e)?;
        let (row_u, rhs_u) = oracle::torque_ecbf_row(&m, &spec, &e, &q, &qd)?;
        let mass = mass_matrix(&m, &q)?;
        let bias = bias_forces(&m, &q, &qd)?;
        let pu = QpProblem::unconstrained(DMatrix::identity(n, n) * 2.0, -&target * 2.0)
            .with_inequalities(-DMatrix::from_row_slice(1, n, row_u.as_slice()), DVector::from_element(1, -rhs_u));
        let pq = QpProblem::unconstrained(mass.transpose() * &mass * 2.0, mass.transpose() * (&bias - &target) * 2.0)
            .with_inequalities(-DMatrix::from_row_slice(1, n, acc.row.as_slice()), DVector::from_element(1, -acc.rhs));
        let (su, sq) = (solve(&pu, None)?, solve(&pq, None)?);
        let err = if su.is_optimal() && sq.is_optimal() {
            (&su.x - (&mass * &sq.x + &bias)).amax() / (1.0 + su.x.amax())
        } else {
            f64::INFINITY
        };
        worst = worst.max(err);
        active += usize::from(!su.active_set.is_empty());
    }
    let binding = if active > 0 { 0.0 } else { 1.0 };
    Ok(vec![
        Check::new("torque-vs-acceleration-program", worst, 1e-8, states),
        Check::new("barrier-binds-in-some-states", binding, 0.0, active),
    ])
}

/// Compare pole acceptance with `B_i` expanded by hand for relative degrees two and three.
fn theorem1(samples: usize) -> Result<Vec<Check>> {
    let mut r = rng(77);
    let (mut mismatches, mut rest_mismatches, mut rejected) = (0usize, 0usize, 0usize);
    for k in 0..samples {
        let degree = 2 + k % 2;
        let eta: Vec<f64> = (0..degree)
            .map(|i| if i == 0 { r.random_range(0.0..2.0) } else { r.random_range(-10.0..10.0) })
            .collect();
        let p: Vec<f64> = (0..degree).map(|_| r.random_range(-1.0..15.0)).collect();
        let positive = p.iter().all(|&v| v > 0.0);
        let b1 = eta[1] + p[0] * eta[0];
        let expected = if degree == 2 {
            positive && b1 >= 0.0
        } else {
            let b2 = eta[2] + p[0] * eta[1] + p[1] * b1;
            positive && b1 >= 0.0 && b2 >= 0.0
        };
        let accepted = validate_poles(&p, &eta, false)?.accepted;
        mismatches += usize::from(accepted != expected);
        rejected += usize::from(!expected);
        let mut rest = vec![0.0; degree];
        rest[0] = eta[0];
        rest_mismatches += usize::from(validate_poles(&p, &rest, true)?.accepted != positive);
    }
    let coverage = if rejected > samples / 20 { 0.0 } else { 1.0 };
    Ok(vec![
        Check::new("acceptance-matches-direct-recursion", mismatches as f64, 0.0, samples),
        Check::new("rest-start-accepts-positive-poles", rest_mismatches as f64, 0.0, samples),
        Check::new("grid-contains-rejections", coverage, 0.0, rejected),
    ])
}
