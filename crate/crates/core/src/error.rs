use thiserror::Error;

/// Errors raised by model construction, evaluation, control and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unknown frame `{0}`")]
    UnknownFrame(String),

    #[error("unknown joint `{0}`")]
    UnknownJoint(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("configuration guard: base pitch {pitch:.4} rad is within 0.1 rad of gimbal lock")]
    GimbalLock { pitch: f64 },

    #[error("loop closure `{0}` is singular: its endpoints coincide")]
    SingularClosure(String),

    #[error("contact loss: aggregate normal force {fz:.3e} N is below the minimum {min:.3e} N")]
    ContactLoss { fz: f64, min: f64 },

    #[error("no active contacts, support polygon undefined")]
    NoSupport,

    #[error("invalid task `{name}`: {reason}")]
    InvalidTask { name: String, reason: String },

    #[error("reference undefined at t = {0}")]
    ReferenceUndefined(f64),

    #[error("invalid barrier `{name}`: {reason}")]
    InvalidBarrier { name: String, reason: String },

    #[error("nonpositive pole {0}")]
    NonPositivePole(f64),

    #[error("initial state is unsafe: h(x0) = {0:.6e} < 0")]
    UnsafeInitialState(f64),

    #[error("barrier `{0}` has a vanishing decoupling row")]
    VanishingDecoupling(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("simulation fault at t = {t:.4}: {reason}")]
    SimulationFault { t: f64, reason: String },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
