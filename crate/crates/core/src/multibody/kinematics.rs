use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::model::{FrameId, Primitive, RobotModel};
use crate::error::{Error, Result};
use crate::math::axis_rotation;

/// World pose of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

/// Link placements, and optionally velocities and velocity-product accelerations,
/// for one configuration.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub(crate) rot: Vec<Matrix3<f64>>,
    pub(crate) pos: Vec<Vector3<f64>>,
    /// Joint axis of each link in world coordinates.
    pub(crate) axis: Vec<Vector3<f64>>,
    pub(crate) omega: Vec<Vector3<f64>>,
    pub(crate) vel: Vec<Vector3<f64>>,
    /// Angular and linear acceleration of the link origin with `q̈ = 0`.
    pub(crate) alpha_bias: Vec<Vector3<f64>>,
    pub(crate) acc_bias: Vec<Vector3<f64>>,
    q: DVector<f64>,
    qdot: Option<DVector<f64>>,
}

/// Point velocity and velocity-product acceleration of a frame.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FrameMotion {
    pub omega: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub alpha_bias: Vector3<f64>,
    pub acc_bias: Vector3<f64>,
}

impl Kinematics {
    pub fn new(model: &RobotModel, q: &DVector<f64>, qdot: Option<&DVector<f64>>) -> Self {
        let n = model.n();
        let mut k = Kinematics {
            rot: Vec::with_capacity(n),
            pos: Vec::with_capacity(n),
            axis: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            vel: Vec::with_capacity(n),
            alpha_bias: Vec::with_capacity(n),
            acc_bias: Vec::with_capacity(n),
            q: q.clone(),
            qdot: qdot.cloned(),
        };
        let zero = Vector3::zeros();
        for (i, link) in model.links.iter().enumerate() {
            let (rp, pp, wp, vp, alp, acp) = match link.parent {
                Some(p) => (
                    k.rot[p],
                    k.pos[p],
                    k.omega[p],
                    k.vel[p],
                    k.alpha_bias[p],
                    k.acc_bias[p],
                ),
                None => (Matrix3::identity(), zero, zero, zero, zero, zero),
            };
            let qd = qdot.map_or(0.0, |v| v[i]);
            let a = rp * link.axis;
            let joint_origin = pp + rp * link.origin;
            match link.kind {
                Primitive::Revolute => {
                    let r = joint_origin - pp;
                    k.rot.push(rp * axis_rotation(&link.axis, q[i]));
                    k.pos.push(joint_origin);
                    k.omega.push(wp + a * qd);
                    k.vel.push(vp + wp.cross(&r));
                    k.alpha_bias.push(alp + wp.cross(&a) * qd);
                    k.acc_bias.push(acp + alp.cross(&r) + wp.cross(&wp.cross(&r)));
                }
                Primitive::Prismatic => {
                    let p = joint_origin + a * q[i];
                    let r = p - pp;
                    k.rot.push(rp);
                    k.pos.push(p);
                    k.omega.push(wp);
                    k.vel.push(vp + wp.cross(&r) + a * qd);
                    k.alpha_bias.push(alp);
                    k.acc_bias
                        .push(acp + alp.cross(&r) + wp.cross(&wp.cross(&r)) + wp.cross(&a) * (2.0 * qd));
                }
            }
            k.axis.push(a);
        }
        k
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn qdot(&self) -> Option<&DVector<f64>> {
        self.qdot.as_ref()
    }

    pub fn link_rotation(&self, link: usize) -> &Matrix3<f64> {
        &self.rot[link]
    }

    pub fn link_position(&self, link: usize) -> &Vector3<f64> {
        &self.pos[link]
    }

    pub fn frame_pose(&self, model: &RobotModel, id: FrameId) -> Result<FramePose> {
        let f = model.frame(id)?;
        Ok(match f.link {
            None => FramePose {
                position: f.offset,
                rotation: f.rotation,
            },
            Some(l) => FramePose {
                position: self.pos[l] + self.rot[l] * f.offset,
                rotation: self.rot[l] * f.rotation,
            },
        })
    }

    /// World-frame geometric Jacobian (linear rows first) of a point rigidly attached to `link`.
    pub(crate) fn point_jacobian(
        &self,
        model: &RobotModel,
        link: Option<usize>,
        point: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let n = model.n();
        let mut jac = DMatrix::zeros(6, n);
        let Some(l) = link else { return jac };
        for j in 0..n {
            if !model.supports[l][j] {
                continue;
            }
            let a = self.axis[j];
            match model.links[j].kind {
                Primitive::Revolute => {
                    let lin = a.cross(&(point - self.pos[j]));
                    jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
                    jac.fixed_view_mut::<3, 1>(3, j).copy_from(&a);
                }
                Primitive::Prismatic => {
                    jac.fixed_view_mut::<3, 1>(0, j).copy_from(&a);
                }
            }
        }
        jac
    }

    pub(crate) fn point_motion(&self, link: Option<usize>, point: &Vector3<f64>) -> FrameMotion {
        match link {
            None => FrameMotion {
                omega: Vector3::zeros(),
                vel: Vector3::zeros(),
                alpha_bias: Vector3::zeros(),
                acc_bias: Vector3::zeros(),
            },
            Some(l) => {
                let r = point - self.pos[l];
                let w = self.omega[l];
                FrameMotion {
                    omega: w,
                    vel: self.vel[l] + w.cross(&r),
                    alpha_bias: self.alpha_bias[l],
                    acc_bias: self.acc_bias[l] + self.alpha_bias[l].cross(&r) + w.cross(&w.cross(&r)),
                }
            }
        }
    }

    pub fn frame_jacobian(&self, model: &RobotModel, id: FrameId) -> Result<DMatrix<f64>> {
        let pose = self.frame_pose(model, id)?;
        Ok(self.point_jacobian(model, model.frames[id.0].link, &pose.position))
    }

    pub(crate) fn frame_motion(&self, model: &RobotModel, id: FrameId) -> Result<FrameMotion> {
        let pose = self.frame_pose(model, id)?;
        Ok(self.point_motion(model.frames[id.0].link, &pose.position))
    }

    /// Velocity-product acceleration `J̇ q̇` of a frame (linear then angular).
    pub fn frame_jdot_qdot(&self, model: &RobotModel, id: FrameId) -> Result<DVector<f64>> {
        let m = self.frame_motion(model, id)?;
        Ok(DVector::from_iterator(
            6,
            m.acc_bias.iter().chain(m.alpha_bias.iter()).copied(),
        ))
    }

    /// World position of the link center of mass.
    pub(crate) fn com_of(&self, model: &RobotModel, link: usize) -> Vector3<f64> {
        self.pos[link] + self.rot[link] * model.links[link].com
    }

    pub fn com_position(&self, model: &RobotModel) -> Vector3<f64> {
        let total = model.total_mass();
        model
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.mass > 0.0)
            .map(|(i, l)| self.com_of(model, i) * l.mass)
            .sum::<Vector3<f64>>()
            / total
    }

    pub fn com_jacobian(&self, model: &RobotModel) -> DMatrix<f64> {
        let total = model.total_mass();
        let mut jac = DMatrix::zeros(3, model.n());
        for (i, l) in model.links.iter().enumerate() {
            if l.mass > 0.0 {
                let c = self.com_of(model, i);
                jac += self.point_jacobian(model, Some(i), &c).rows(0, 3) * (l.mass / total);
            }
        }
        jac
    }

    pub fn com_jdot_qdot(&self, model: &RobotModel) -> Vector3<f64> {
        let total = model.total_mass();
        model
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.mass > 0.0)
            .map(|(i, l)| self.point_motion(Some(i), &self.com_of(model, i)).acc_bias * l.mass)
            .sum::<Vector3<f64>>()
            / total
    }

    /// Kinetic energy assembled body by body from the recursive velocities.
    pub fn kinetic_energy(&self, model: &RobotModel) -> f64 {
        model
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.mass > 0.0)
            .map(|(i, l)| {
                let c = self.com_of(model, i);
                let m = self.point_motion(Some(i), &c);
                let inertia_world = self.rot[i] * l.inertia * self.rot[i].transpose();
                0.5 * l.mass * m.vel.norm_squared() + 0.5 * m.omega.dot(&(inertia_world * m.omega))
            })
            .sum()
    }

    /// Angular momentum about a world-fixed point. Zero without velocities.
    pub fn angular_momentum(&self, model: &RobotModel, point: &Vector3<f64>) -> Vector3<f64> {
        if self.qdot.is_none() {
            return Vector3::zeros();
        }
        model
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.mass > 0.0)
            .map(|(i, l)| {
                let c = self.com_of(model, i);
                let m = self.point_motion(Some(i), &c);
                let inertia_world = self.rot[i] * l.inertia * self.rot[i].transpose();
                (c - point).cross(&(m.vel * l.mass)) + inertia_world * m.omega
            })
            .sum()
    }

    pub fn potential_energy(&self, model: &RobotModel) -> f64 {
        model
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| l.mass * model.gravity * self.com_of(model, i).z)
            .sum()
    }
}

fn check_q(model: &RobotModel, q: &DVector<f64>) -> Result<()> {
    if q.len() != model.n() {
        return Err(Error::Dimension {
            context: "configuration",
            expected: model.n(),
            actual: q.len(),
        });
    }
    Ok(())
}

pub fn forward_kinematics(model: &RobotModel, q: &DVector<f64>, frame: FrameId) -> Result<FramePose> {
    check_q(model, q)?;
    Kinematics::new(model, q, None).frame_pose(model, frame)
}

/// 6 × n Jacobian of a frame: linear velocity rows, then world angular velocity rows.
pub fn frame_jacobian(model: &RobotModel, q: &DVector<f64>, frame: FrameId) -> Result<DMatrix<f64>> {
    check_q(model, q)?;
    Kinematics::new(model, q, None).frame_jacobian(model, frame)
}

pub fn jdot_qdot(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    frame: FrameId,
) -> Result<DVector<f64>> {
    check_q(model, q)?;
    model.check_velocity(qdot)?;
    Kinematics::new(model, q, Some(qdot)).frame_jdot_qdot(model, frame)
}

pub fn com_position(model: &RobotModel, q: &DVector<f64>) -> Result<Vector3<f64>> {
    check_q(model, q)?;
    Ok(Kinematics::new(model, q, None).com_position(model))
}

pub fn com_jacobian(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_q(model, q)?;
    Ok(Kinematics::new(model, q, None).com_jacobian(model))
}
