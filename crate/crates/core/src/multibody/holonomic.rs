//! Holonomic constraint rows: loop-closure rod lengths, then welded contacts.

use nalgebra::{DMatrix, DVector, RowDVector, Vector3};

use super::kinematics::{FramePose, Kinematics};
use super::model::{FrameId, RobotModel};
use crate::error::{Error, Result};
use crate::math::rotation_error;

/// Coincident loop endpoints closer than this make the rod-length gradient undefined.
pub const SINGULAR_CLOSURE_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContactKind {
    /// Three force rows, no moments.
    #[serde(rename = "point-3dof")]
    Point,
    /// Full six-component wrench.
    #[serde(rename = "surface-6dof")]
    Surface,
}

impl ContactKind {
    pub fn dim(self) -> usize {
        match self {
            ContactKind::Point => 3,
            ContactKind::Surface => 6,
        }
    }
}

/// A contact frame held fixed at `anchor`. Rows are expressed in the contact frame.
#[derive(Debug, Clone)]
pub struct WeldedContact {
    pub frame: FrameId,
    pub kind: ContactKind,
    pub anchor: FramePose,
}

/// Stacked `J`, `J̇ q̇`, position-level drift and `J q̇` for a constraint set.
#[derive(Debug, Clone)]
pub struct ConstraintRows {
    pub jacobian: DMatrix<f64>,
    pub jdot_qdot: DVector<f64>,
    pub residual: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl ConstraintRows {
    pub fn empty(n: usize) -> Self {
        ConstraintRows {
            jacobian: DMatrix::zeros(0, n),
            jdot_qdot: DVector::zeros(0),
            residual: DVector::zeros(0),
            velocity: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.jacobian.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct LoopRow {
    residual: f64,
    gradient: RowDVector<f64>,
    jdot_qdot: f64,
}

fn loop_row(
    model: &RobotModel,
    kin: &Kinematics,
    index: usize,
    qdot: Option<&DVector<f64>>,
) -> Result<LoopRow> {
    let closure = &model.loops[index];
    let pa = kin.frame_pose(model, closure.frame_a)?.position;
    let pb = kin.frame_pose(model, closure.frame_b)?.position;
    let d = pa - pb;
    let dist = d.norm();
    if dist < SINGULAR_CLOSURE_DISTANCE {
        return Err(Error::SingularClosure(closure.name.clone()));
    }
    let u = d / dist;
    let ja = kin.point_jacobian(model, model.frames[closure.frame_a.0].link, &pa);
    let jb = kin.point_jacobian(model, model.frames[closure.frame_b.0].link, &pb);
    let jd = ja.rows(0, 3) - jb.rows(0, 3);
    let gradient = u.transpose() * &jd;
    let jdot_qdot = match qdot {
        None => 0.0,
        Some(_) => {
            let ma = kin.point_motion(model.frames[closure.frame_a.0].link, &pa);
            let mb = kin.point_motion(model.frames[closure.frame_b.0].link, &pb);
            let ddot = ma.vel - mb.vel;
            let along = u.dot(&ddot);
            u.dot(&(ma.acc_bias - mb.acc_bias)) + (ddot.norm_squared() - along * along) / dist
        }
    };
    Ok(LoopRow {
        residual: dist - closure.length,
        gradient,
        jdot_qdot,
    })
}

/// `‖p_A − p_B‖ − L` per loop closure.
pub fn loop_residual(model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    let kin = Kinematics::new(model, q, None);
    let mut out = DVector::zeros(model.loops.len());
    for k in 0..model.loops.len() {
        out[k] = loop_row(model, &kin, k, None)?.residual;
    }
    Ok(out)
}

pub fn loop_jacobian(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let kin = Kinematics::new(model, q, None);
    let mut out = DMatrix::zeros(model.loops.len(), model.n());
    for k in 0..model.loops.len() {
        out.row_mut(k).copy_from(&loop_row(model, &kin, k, None)?.gradient);
    }
    Ok(out)
}

pub fn loop_jdot_qdot(model: &RobotModel, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
    let kin = Kinematics::new(model, q, Some(qdot));
    let mut out = DVector::zeros(model.loops.len());
    for k in 0..model.loops.len() {
        out[k] = loop_row(model, &kin, k, Some(qdot))?.jdot_qdot;
    }
    Ok(out)
}

/// Stack loop rows followed by contact rows. `kin` must carry velocities for `qdot`.
pub fn constraint_rows(
    model: &RobotModel,
    kin: &Kinematics,
    qdot: &DVector<f64>,
    contacts: &[WeldedContact],
) -> Result<ConstraintRows> {
    let n = model.n();
    let rows = model.loops.len() + contacts.iter().map(|c| c.kind.dim()).sum::<usize>();
    let mut out = ConstraintRows {
        jacobian: DMatrix::zeros(rows, n),
        jdot_qdot: DVector::zeros(rows),
        residual: DVector::zeros(rows),
        velocity: DVector::zeros(rows),
    };
    let mut r = 0;
    for k in 0..model.loops.len() {
        let row = loop_row(model, kin, k, Some(qdot))?;
        out.jacobian.row_mut(r).copy_from(&row.gradient);
        out.jdot_qdot[r] = row.jdot_qdot;
        out.residual[r] = row.residual;
        r += 1;
    }
    for c in contacts {
        let pose = kin.frame_pose(model, c.frame)?;
        let link = model.frames[c.frame.0].link;
        let jac = kin.point_jacobian(model, link, &pose.position);
        let motion = kin.point_motion(link, &pose.position);
        let rt = pose.rotation.transpose();
        let lin = rt * jac.rows(0, 3);
        out.jacobian.rows_mut(r, 3).copy_from(&lin);
        let acc = rt * (motion.acc_bias - motion.omega.cross(&motion.vel));
        out.jdot_qdot.rows_mut(r, 3).copy_from(&acc);
        let drift: Vector3<f64> = rt * (pose.position - c.anchor.position);
        out.residual.rows_mut(r, 3).copy_from(&drift);
        if c.kind == ContactKind::Surface {
            let ang = rt * jac.rows(3, 3);
            out.jacobian.rows_mut(r + 3, 3).copy_from(&ang);
            out.jdot_qdot
                .rows_mut(r + 3, 3)
                .copy_from(&(rt * motion.alpha_bias));
            out.residual
                .rows_mut(r + 3, 3)
                .copy_from(&rotation_error(&c.anchor.rotation, &pose.rotation));
        }
        r += c.kind.dim();
    }
    out.velocity = &out.jacobian * qdot;
    Ok(out)
}
