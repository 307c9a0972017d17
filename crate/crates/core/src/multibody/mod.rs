//! Rigid multibody systems with fixed or floating bases and closed kinematic chains.

mod dynamics;
mod holonomic;
mod kinematics;
mod model;
mod model_file;

pub use dynamics::{bias_forces, gravity_vector, inverse_dynamics, mass_matrix};
pub(crate) use dynamics::{inverse_dynamics_from, mass_matrix_from};
pub use holonomic::{
    constraint_rows, loop_jacobian, loop_jdot_qdot, loop_residual, ConstraintRows, ContactKind,
    WeldedContact, SINGULAR_CLOSURE_DISTANCE,
};
pub use kinematics::{
    com_jacobian, com_position, forward_kinematics, frame_jacobian, jdot_qdot, FramePose, Kinematics,
};
pub use model::{
    BaseType, BodySpec, Frame, FrameId, JointKind, JointSpec, Link, LoopClosure, ModelBuilder,
    Primitive, RobotModel, State, GIMBAL_MARGIN, GRAVITY,
};
pub use model_file::{
    builtin_model, builtin_model_names, builtin_model_source, load_model_file, load_model_str,
    ModelFile, MODEL_FORMAT, MODEL_VERSION,
};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Every term of the constrained equations of motion at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    /// `C(q, q̇) q̇ + G(q)`.
    pub bias: DVector<f64>,
    pub actuation: DMatrix<f64>,
    pub constraints: ConstraintRows,
}

impl DynamicsTerms {
    pub fn evaluate(
        model: &RobotModel,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        contacts: &[WeldedContact],
    ) -> Result<Self> {
        if q.len() != model.n() {
            return Err(crate::Error::Dimension {
                context: "configuration",
                expected: model.n(),
                actual: q.len(),
            });
        }
        model.check_velocity(qdot)?;
        let kin = Kinematics::new(model, q, Some(qdot));
        Ok(DynamicsTerms {
            mass: mass_matrix_from(model, &kin),
            bias: inverse_dynamics_from(model, &kin, qdot, None, true),
            actuation: model.actuation_matrix(),
            constraints: constraint_rows(model, &kin, qdot, contacts)?,
        })
    }
}
