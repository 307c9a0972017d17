//! Exponential control barrier functions on accelerations.
//!
//! A barrier `h` of relative degree `r` is kept nonnegative by requiring
//! `h^{(r)} ≥ −K_α η` with `η = [h, ḣ, …, h^{(r−1)}]`. Because `h^{(r)}` is affine in `q̈`,
//! the requirement is one linear row on the accelerations of the inverse-dynamics QP.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multibody::{FrameId, Kinematics, RobotModel};

pub const DEFAULT_POLES: [f64; 2] = [10.0, 10.0];
/// Rows whose decoupling vector is shorter than this cannot steer the barrier.
pub const MIN_DECOUPLING_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Always,
    /// Enforced only in the domains listed on the barrier.
    DomainGated,
}

/// Analytic barrier functions of frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum BarrierKind {
    /// `h = sign · p_axis(frame) − threshold`, relative degree two.
    FrameCoordinate { frame: FrameId, axis: usize, sign: f64, threshold: f64 },
    /// `h = sign · (p_axis(frame) − p_axis(other)) − threshold`, relative degree two.
    FrameSeparation { frame: FrameId, other: FrameId, axis: usize, sign: f64, threshold: f64 },
    /// `h = limit − sign · v_axis(frame)`, relative degree one.
    FrameVelocity { frame: FrameId, axis: usize, sign: f64, limit: f64 },
}

impl BarrierKind {
    pub fn relative_degree(&self) -> usize {
        match self {
            BarrierKind::FrameVelocity { .. } => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSpec {
    pub name: String,
    pub kind: BarrierKind,
    pub poles: Vec<f64>,
    pub k_alpha: Vec<f64>,
    /// Soften the row with a heavily penalized slack.
    pub slack: bool,
    pub activation: Activation,
}

impl BarrierSpec {
    pub fn new(name: impl Into<String>, kind: BarrierKind, poles: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let r = kind.relative_degree();
        if poles.len() != r {
            return Err(Error::InvalidBarrier {
                name,
                reason: format!("{} poles given for relative degree {r}", poles.len()),
            });
        }
        let k_alpha = design_k_alpha(&poles)?;
        Ok(BarrierSpec { name, kind, poles, k_alpha, slack: false, activation: Activation::Always })
    }

    pub fn relative_degree(&self) -> usize {
        self.kind.relative_degree()
    }

    /// `h` and the data of its highest derivative, `h^{(r)} = row · q̈ + drift`.
    pub fn evaluate(&self, model: &RobotModel, kin: &Kinematics) -> Result<BarrierEval> {
        let n = model.n();
        let qdot = kin.qdot().cloned().unwrap_or_else(|| DVector::zeros(n));
        let point = |frame: FrameId, axis: usize| -> Result<(f64, RowDVector<f64>, f64)> {
            let p = kin.frame_pose(model, frame)?.position[axis];
            let jac = kin.frame_jacobian(model, frame)?.row(axis).into_owned();
            let jdq = kin.frame_jdot_qdot(model, frame)?[axis];
            Ok((p, jac, jdq))
        };
        let (h, jac, jdq) = match self.kind {
            BarrierKind::FrameCoordinate { frame, axis, sign, threshold } => {
                let (p, j, a) = point(frame, axis)?;
                (sign * p - threshold, j * sign, a * sign)
            }
            BarrierKind::FrameSeparation { frame, other, axis, sign, threshold } => {
                let (pa, ja, aa) = point(frame, axis)?;
                let (pb, jb, ab) = point(other, axis)?;
                (sign * (pa - pb) - threshold, (ja - jb) * sign, (aa - ab) * sign)
            }
            BarrierKind::FrameVelocity { frame, axis, sign, limit } => {
                let (_, j, a) = point(frame, axis)?;
                let v = (&j * &qdot)[0];
                (limit - sign * v, j * -sign, -sign * a)
            }
        };
        if !h.is_finite() {
            return Err(Error::InvalidBarrier { name: self.name.clone(), reason: "barrier is not finite".into() });
        }
        let hdot = if self.relative_degree() == 2 { (&jac * &qdot)[0] } else { f64::NAN };
        Ok(BarrierEval { h, hdot, jacobian: jac, jdot_qdot: jdq })
    }

    /// `η = [h, ḣ, …]` truncated to the relative degree.
    pub fn eta(&self, eval: &BarrierEval) -> DVector<f64> {
        if self.relative_degree() == 2 {
            DVector::from_vec(vec![eval.h, eval.hdot])
        } else {
            DVector::from_vec(vec![eval.h])
        }
    }
}

/// Barrier value with the coefficients of its highest derivative.
///
/// For relative degree two, `ḣ = J_h q̇` and `ḧ = J_h q̈ + J̇_h q̇`. For relative degree
/// one, `ḣ = J_h q̈ + J̇_h q̇` and `hdot` is not defined.
#[derive(Debug, Clone)]
pub struct BarrierEval {
    pub h: f64,
    pub hdot: f64,
    pub jacobian: RowDVector<f64>,
    pub jdot_qdot: f64,
}

pub fn barrier_eval(
    spec: &BarrierSpec,
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<BarrierEval> {
    let kin = Kinematics::new(model, q, Some(qdot));
    spec.evaluate(model, &kin)
}

/// Coefficients `[c_0, …, c_{r−1}]` of `Π (s + p_i) = s^r + c_{r−1} s^{r−1} + … + c_0`.
pub fn design_k_alpha(poles: &[f64]) -> Result<Vec<f64>> {
    if poles.is_empty() {
        return Err(Error::InvalidBarrier { name: "<poles>".into(), reason: "no poles given".into() });
    }
    if let Some(&p) = poles.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::NonPositivePole(p));
    }
    // Ascending-power polynomial coefficients, leading 1 kept at the end.
    let mut coeffs = vec![1.0];
    for &p in poles {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (k, c) in coeffs.iter().enumerate() {
            next[k] += p * c;
            next[k + 1] += c;
        }
        coeffs = next;
    }
    coeffs.pop();
    Ok(coeffs)
}

/// Closed-loop matrix `F_b − G_b K_α` of the chain of integrators.
pub fn companion_matrix(k_alpha: &[f64]) -> DMatrix<f64> {
    let r = k_alpha.len();
    let mut a = DMatrix::zeros(r, r);
    for i in 0..r.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for (j, k) in k_alpha.iter().enumerate() {
        a[(r - 1, j)] = -k;
    }
    a
}

/// `C_b e^{(F_b − G_b K_α) t} η_0`.
pub fn exponential_bound(k_alpha: &[f64], eta0: &DVector<f64>, t: f64) -> f64 {
    let a = companion_matrix(k_alpha) * t;
    (a.exp() * eta0)[0]
}

/// Outcome of the pole check at an initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleReport {
    pub accepted: bool,
    /// `q̇_0 = 0`, so every positive pole set is admissible.
    pub rest_start: bool,
    /// `B_0, …, B_{r−1}` at the initial state.
    pub b_values: Vec<f64>,
    pub poles: Vec<PoleCheck>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoleCheck {
    pub pole: f64,
    /// Smallest admissible value from the recursion, when it constrains this pole.
    pub lower_bound: Option<f64>,
    pub ok: bool,
}

/// Check poles against `η_0` using `B_0 = h`, `B_i = Ḃ_{i−1} + p_i B_{i−1}`.
///
/// Each `B_i` for `i < r` is a combination of `η_0` entries, so pole `p_i` is admissible
/// when it is positive and keeps `B_i(x_0) ≥ 0`, i.e. `p_i ≥ −Ḃ_{i−1}/B_{i−1}`.
pub fn validate_poles(poles: &[f64], eta0: &[f64], rest_start: bool) -> Result<PoleReport> {
    let r = eta0.len();
    if poles.len() != r {
        return Err(Error::Dimension { context: "pole vector", expected: r, actual: poles.len() });
    }
    if eta0[0] < 0.0 {
        return Err(Error::UnsafeInitialState(eta0[0]));
    }
    // b[k] holds the derivative coefficients of B_i: B_i = Σ_k b[k] h^{(k)}.
    let mut b = vec![0.0; r + 1];
    b[0] = 1.0;
    let value = |b: &[f64]| (0..r).map(|k| b[k] * eta0[k]).sum::<f64>();
    let mut b_values = vec![eta0[0]];
    let mut checks = Vec::with_capacity(r);
    let mut accepted = true;
    for i in 1..=r {
        let p = poles[i - 1];
        let mut ok = p > 0.0;
        let mut lower_bound = None;
        if i < r {
            let prev = value(&b);
            // Ḃ_{i−1} shifts every coefficient one derivative up.
            let mut shifted = vec![0.0; r + 1];
            shifted[1..=r].copy_from_slice(&b[..r]);
            let dprev = value(&shifted);
            let next: Vec<f64> = (0..=r).map(|k| shifted[k] + p * b[k]).collect();
            let bi = value(&next);
            if prev > 0.0 {
                lower_bound = Some(-dprev / prev);
            }
            ok &= bi >= 0.0;
            b_values.push(bi);
            b = next;
        }
        accepted &= ok;
        checks.push(PoleCheck { pole: p, lower_bound, ok });
    }
    Ok(PoleReport { accepted, rest_start, b_values, poles: checks })
}

/// The A-ECBF inequality `row · q̈ ≥ rhs` at one state.
#[derive(Debug, Clone)]
pub struct BarrierState {
    pub eta: DVector<f64>,
    pub row: RowDVector<f64>,
    pub rhs: f64,
}

pub fn aecbf_row(spec: &BarrierSpec, eval: &BarrierEval) -> Result<BarrierState> {
    if eval.jacobian.norm() < MIN_DECOUPLING_NORM {
        return Err(Error::VanishingDecoupling(spec.name.clone()));
    }
    let eta = spec.eta(eval);
    let k_eta: f64 = spec.k_alpha.iter().zip(eta.iter()).map(|(k, e)| k * e).sum();
    Ok(BarrierState { eta, row: eval.jacobian.clone(), rhs: -eval.jdot_qdot - k_eta })
}

/// Torque-space barrier rows for unconstrained fixed-base systems, used to cross-check
/// the acceleration form.
pub mod oracle {
    use nalgebra::{DVector, RowDVector};

    use super::{BarrierEval, BarrierSpec};
    use crate::error::{Error, Result};
    use crate::multibody::{bias_forces, mass_matrix, BaseType, RobotModel};

    /// `row_u · u ≥ rhs_u` obtained by substituting `q̈ = M⁻¹(B u − bias)`.
    pub fn torque_ecbf_row(
        model: &RobotModel,
        spec: &BarrierSpec,
        eval: &BarrierEval,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
    ) -> Result<(RowDVector<f64>, f64)> {
        if model.base != BaseType::Fixed || !model.loops().is_empty() {
            return Err(Error::Unsupported("torque-space barrier needs an unconstrained fixed-base model".into()));
        }
        let m = mass_matrix(model, q)?;
        let bias = bias_forces(model, q, qdot)?;
        let chol = m.cholesky().ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?;
        let b = model.actuation_matrix();
        let minv_b = chol.solve(&b);
        let minv_bias = chol.solve(&bias);
        let state = super::aecbf_row(spec, eval)?;
        let row_u = &eval.jacobian * minv_b;
        let rhs_u = state.rhs + (&eval.jacobian * minv_bias)[0];
        Ok((row_u, rhs_u))
    }
}
