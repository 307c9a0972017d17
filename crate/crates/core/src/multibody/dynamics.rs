//! Joint-space inertia (composite rigid bodies) and bias forces (recursive Newton-Euler),
//! both in world-frame Plücker coordinates.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector6};

use super::kinematics::Kinematics;
use super::model::{Primitive, RobotModel};
use crate::error::Result;
use crate::math::skew;

fn motion_subspace(model: &RobotModel, kin: &Kinematics, j: usize) -> Vector6<f64> {
    let a = kin.axis[j];
    match model.links[j].kind {
        Primitive::Revolute => {
            let m = kin.pos[j].cross(&a);
            Vector6::new(a.x, a.y, a.z, m.x, m.y, m.z)
        }
        Primitive::Prismatic => Vector6::new(0.0, 0.0, 0.0, a.x, a.y, a.z),
    }
}

/// Spatial inertia of a link about the world origin.
fn spatial_inertia(model: &RobotModel, kin: &Kinematics, i: usize) -> Matrix6<f64> {
    let link = &model.links[i];
    let mut out = Matrix6::zeros();
    if link.mass == 0.0 {
        return out;
    }
    let c = kin.com_of(model, i);
    let cx = skew(&c);
    let ic = kin.rot[i] * link.inertia * kin.rot[i].transpose();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(ic + link.mass * cx * cx.transpose()));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(link.mass * cx));
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(link.mass * cx.transpose()));
    out.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * link.mass));
    out
}

fn cross_motion(v: &Vector6<f64>, m: &Vector6<f64>) -> Vector6<f64> {
    let (w, vo) = (v.fixed_rows::<3>(0), v.fixed_rows::<3>(3));
    let (mw, mv) = (m.fixed_rows::<3>(0), m.fixed_rows::<3>(3));
    let top = w.cross(&mw);
    let bot = w.cross(&mv) + vo.cross(&mw);
    Vector6::new(top.x, top.y, top.z, bot.x, bot.y, bot.z)
}

fn cross_force(v: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let (w, vo) = (v.fixed_rows::<3>(0), v.fixed_rows::<3>(3));
    let (n, fl) = (f.fixed_rows::<3>(0), f.fixed_rows::<3>(3));
    let top = w.cross(&n) + vo.cross(&fl);
    let bot = w.cross(&fl);
    Vector6::new(top.x, top.y, top.z, bot.x, bot.y, bot.z)
}

pub(crate) fn mass_matrix_from(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = model.n();
    let mut composite: Vec<Matrix6<f64>> = (0..n).map(|i| spatial_inertia(model, kin, i)).collect();
    for i in (0..n).rev() {
        if let Some(p) = model.links[i].parent {
            let c = composite[i];
            composite[p] += c;
        }
    }
    let subspaces: Vec<Vector6<f64>> = (0..n).map(|j| motion_subspace(model, kin, j)).collect();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let f = composite[j] * subspaces[j];
        let mut cur = Some(j);
        while let Some(i) = cur {
            let v = subspaces[i].dot(&f);
            m[(i, j)] = v;
            m[(j, i)] = v;
            cur = model.links[i].parent;
        }
    }
    m
}

/// Inverse dynamics `M q̈ + C q̇ + G` for a given acceleration.
pub(crate) fn inverse_dynamics_from(
    model: &RobotModel,
    kin: &Kinematics,
    qdot: &DVector<f64>,
    qddot: Option<&DVector<f64>>,
    gravity: bool,
) -> DVector<f64> {
    let n = model.n();
    let g = if gravity { model.gravity } else { 0.0 };
    let base_acc = Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, g);
    let mut vel = vec![Vector6::zeros(); n];
    let mut acc = vec![Vector6::zeros(); n];
    let mut force = vec![Vector6::zeros(); n];
    for i in 0..n {
        let s = motion_subspace(model, kin, i);
        let (vp, ap) = match model.links[i].parent {
            Some(p) => (vel[p], acc[p]),
            None => (Vector6::zeros(), base_acc),
        };
        vel[i] = vp + s * qdot[i];
        acc[i] = ap + cross_motion(&vel[i], &s) * qdot[i] + s * qddot.map_or(0.0, |a| a[i]);
        let inertia = spatial_inertia(model, kin, i);
        force[i] = inertia * acc[i] + cross_force(&vel[i], &(inertia * vel[i]));
    }
    let mut tau = DVector::zeros(n);
    for i in (0..n).rev() {
        tau[i] = motion_subspace(model, kin, i).dot(&force[i]);
        if let Some(p) = model.links[i].parent {
            let f = force[i];
            force[p] += f;
        }
    }
    tau
}

pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    if q.len() != model.n() {
        return Err(crate::Error::Dimension {
            context: "configuration",
            expected: model.n(),
            actual: q.len(),
        });
    }
    Ok(mass_matrix_from(model, &Kinematics::new(model, q, None)))
}

/// `C(q, q̇) q̇ + G(q)`.
pub fn bias_forces(model: &RobotModel, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
    if q.len() != model.n() {
        return Err(crate::Error::Dimension {
            context: "configuration",
            expected: model.n(),
            actual: q.len(),
        });
    }
    model.check_velocity(qdot)?;
    Ok(inverse_dynamics_from(model, &Kinematics::new(model, q, None), qdot, None, true))
}

/// Full inverse dynamics `M q̈ + C q̇ + G`.
pub fn inverse_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.check_velocity(qdot)?;
    model.check_velocity(qddot)?;
    Ok(inverse_dynamics_from(model, &Kinematics::new(model, q, None), qdot, Some(qddot), true))
}

pub fn gravity_vector(model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    bias_forces(model, q, &DVector::zeros(model.n()))
}

