//! Whole-body inverse-dynamics control with acceleration-based exponential control
//! barrier functions, plus the constrained-dynamics simulator used to check it.

pub mod constraints;
pub mod error;
pub mod gait;
pub mod idqp;
pub mod math;
pub mod multibody;
pub mod qp;
pub mod runner;
pub mod safety;
pub mod scenario;
pub mod sim;
pub mod tasks;
pub mod verify;

pub use error::{Error, Result};
pub use constraints::ContactSpec;
pub use idqp::{ControlOutput, Controller, ControllerOptions};
pub use multibody::{builtin_model, FrameId, Kinematics, RobotModel, State};
pub use qp::{QpProblem, QpSolution, QpStatus};
pub use runner::{run, Metrics, RunOutput};
pub use safety::{BarrierKind, BarrierSpec};
pub use scenario::Scenario;
pub use sim::SimConfig;
pub use tasks::{Reference, TaskKind, TaskSpec};
