//! Constrained forward dynamics and time integration.
//!
//! Holonomic constraints are enforced at the acceleration level by solving
//! `[M −Jᵀ; J 0] [q̈; λ] = [B u − bias + f_ext; −J̇ q̇ − stabilization]`, with Baumgarte
//! feedback on position and velocity drift.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multibody::{
    constraint_rows, inverse_dynamics_from, mass_matrix_from, FrameId, Kinematics, RobotModel, State,
    WeldedContact,
};

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_BAUMGARTE: f64 = 20.0;
/// Relative singular-value cutoff for redundant constraint rows.
const PINV_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    SemiImplicitEuler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub integrator: Integrator,
    /// Baumgarte velocity gain α, 1/s.
    pub alpha: f64,
    /// Baumgarte position gain β, 1/s.
    pub beta: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: DEFAULT_DT, integrator: Integrator::Rk4, alpha: DEFAULT_BAUMGARTE, beta: DEFAULT_BAUMGARTE }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Scenario("sim: dt must be positive and Baumgarte gains nonnegative".into()));
        }
        Ok(())
    }

    fn stabilization(&self) -> Option<(f64, f64)> {
        Some((self.alpha, self.beta))
    }
}

/// World-frame wrench applied at a frame origin over `[start, start + duration)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalForce {
    pub frame: FrameId,
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
    pub start: f64,
    pub duration: f64,
}

impl ExternalForce {
    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

/// `Jᵀ [F; M]` summed over the forces active at `t`.
pub fn generalized_external_force(
    model: &RobotModel,
    kin: &Kinematics,
    forces: &[ExternalForce],
    t: f64,
) -> Result<DVector<f64>> {
    let mut tau = DVector::zeros(model.n());
    for f in forces.iter().filter(|f| f.active(t)) {
        let jac = kin.frame_jacobian(model, f.frame)?;
        let mut w = DVector::zeros(6);
        w.fixed_rows_mut::<3>(0).copy_from(&f.force);
        w.fixed_rows_mut::<3>(3).copy_from(&f.moment);
        tau += jac.transpose() * w;
    }
    Ok(tau)
}

#[derive(Debug, Clone)]
pub struct ForwardDynamics {
    pub qddot: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// Solve the constrained equations of motion. `stabilization` is `(α, β)`.
pub fn constrained_forward_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    u: &DVector<f64>,
    f_ext: Option<&DVector<f64>>,
    contacts: &[WeldedContact],
    stabilization: Option<(f64, f64)>,
) -> Result<ForwardDynamics> {
    let kin = Kinematics::new(model, q, Some(qdot));
    forward_dynamics_from(model, &kin, qdot, u, f_ext, contacts, stabilization)
}

fn forward_dynamics_from(
    model: &RobotModel,
    kin: &Kinematics,
    qdot: &DVector<f64>,
    u: &DVector<f64>,
    f_ext: Option<&DVector<f64>>,
    contacts: &[WeldedContact],
    stabilization: Option<(f64, f64)>,
) -> Result<ForwardDynamics> {
    if u.len() != model.m() {
        return Err(Error::Dimension { context: "torque vector", expected: model.m(), actual: u.len() });
    }
    let mass = mass_matrix_from(model, kin);
    let bias = inverse_dynamics_from(model, kin, qdot, None, true);
    let mut force = model.actuation_matrix() * u - bias;
    if let Some(f) = f_ext {
        force += f;
    }
    let chol = mass.cholesky().ok_or_else(|| Error::SimulationFault {
        t: f64::NAN,
        reason: "mass matrix is not positive definite".into(),
    })?;
    let rows = constraint_rows(model, kin, qdot, contacts)?;
    if rows.is_empty() {
        return Ok(ForwardDynamics { qddot: chol.solve(&force), lambda: DVector::zeros(0) });
    }
    let mut rhs = -&rows.jdot_qdot;
    if let Some((alpha, beta)) = stabilization {
        rhs -= &rows.velocity * (2.0 * alpha) + &rows.residual * (beta * beta);
    }
    let jt = rows.jacobian.transpose();
    let minv_jt = chol.solve(&jt);
    let minv_f = chol.solve(&force);
    let schur = &rows.jacobian * &minv_jt;
    let target = rhs - &rows.jacobian * &minv_f;
    let lambda = schur_solve(schur, &target);
    let qddot = minv_f + minv_jt * &lambda;
    Ok(ForwardDynamics { qddot, lambda })
}

/// Cholesky when well conditioned, otherwise the minimum-norm least-squares solution.
fn schur_solve(schur: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if let Some(c) = schur.clone().cholesky() {
        let d = c.l_dirty().diagonal();
        let (lo, hi) = (d.min(), d.max());
        if lo > 0.0 && (lo / hi).powi(2) > 1e-12 {
            return c.solve(rhs);
        }
    }
    let svd = schur.svd(true, true);
    let cutoff = PINV_TOLERANCE * svd.singular_values.max();
    svd.solve(rhs, cutoff).unwrap_or_else(|_| DVector::zeros(rhs.len()))
}

/// Velocity right after an impact that activates `contacts`:
/// `[M −Jᵀ; J 0] [q̇⁺; Λ] = [M q̇⁻; 0]`. Returns `(q̇⁺, Λ)`.
pub fn impact_projection(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    contacts: &[WeldedContact],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let kin = Kinematics::new(model, q, Some(qdot));
    let mass = mass_matrix_from(model, &kin);
    let rows = constraint_rows(model, &kin, qdot, contacts)?;
    if rows.is_empty() {
        return Ok((qdot.clone(), DVector::zeros(0)));
    }
    let chol = mass.clone().cholesky().ok_or_else(|| Error::SimulationFault {
        t: f64::NAN,
        reason: "mass matrix is not positive definite".into(),
    })?;
    let minv_jt = chol.solve(&rows.jacobian.transpose());
    let schur = &rows.jacobian * &minv_jt;
    let impulse = schur_solve(schur, &(-(&rows.jacobian * qdot)));
    Ok((qdot + minv_jt * &impulse, impulse))
}

/// Kinetic plus gravitational potential energy.
pub fn total_energy(model: &RobotModel, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
    let kin = Kinematics::new(model, q, Some(qdot));
    kin.kinetic_energy(model) + kin.potential_energy(model)
}

/// Advance one integrator step with `u` held constant.
pub fn step(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    config: &SimConfig,
    contacts: &[WeldedContact],
    forces: &[ExternalForce],
) -> Result<State> {
    let dt = config.dt;
    let accel = |q: &DVector<f64>, qd: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
        let kin = Kinematics::new(model, q, Some(qd));
        let f_ext = generalized_external_force(model, &kin, forces, t)?;
        let fd = forward_dynamics_from(model, &kin, qd, u, Some(&f_ext), contacts, config.stabilization())?;
        Ok(fd.qddot)
    };
    let (q, qdot) = match config.integrator {
        Integrator::SemiImplicitEuler => {
            let a = accel(&state.q, &state.qdot, state.t)?;
            let qdot = &state.qdot + a * dt;
            (&state.q + &qdot * dt, qdot)
        }
        Integrator::Rk4 => {
            let (q0, v0, t0) = (&state.q, &state.qdot, state.t);
            let a1 = accel(q0, v0, t0)?;
            let v1 = v0.clone();
            let q2 = q0 + &v1 * (0.5 * dt);
            let v2 = v0 + &a1 * (0.5 * dt);
            let a2 = accel(&q2, &v2, t0 + 0.5 * dt)?;
            let q3 = q0 + &v2 * (0.5 * dt);
            let v3 = v0 + &a2 * (0.5 * dt);
            let a3 = accel(&q3, &v3, t0 + 0.5 * dt)?;
            let q4 = q0 + &v3 * dt;
            let v4 = v0 + &a3 * dt;
            let a4 = accel(&q4, &v4, t0 + dt)?;
            let q = q0 + (v1 + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
            let qdot = v0 + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
            (q, qdot)
        }
    };
    if q.iter().chain(qdot.iter()).any(|v| !v.is_finite()) {
        return Err(Error::SimulationFault { t: state.t, reason: "non-finite state after integration".into() });
    }
    Ok(State::new(q, qdot, state.t + dt))
}
