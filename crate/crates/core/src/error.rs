use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("surface gradient norm {norm:.3e} is below the floor {floor:.3e}")]
    DegenerateGradient { norm: f64, floor: f64 },

    #[error("|phi(x)| = {phi:.3e} exceeds the projection capture radius {capture:.3e}")]
    OutsideCaptureRadius { phi: f64, capture: f64 },

    #[error("surface projection did not converge in {iters} iterations (|phi| = {residual:.3e})")]
    ProjectionDiverged { iters: usize, residual: f64 },

    #[error("adaptive step {step:.3e} fell below the minimum {min_step:.3e} at t = {t}")]
    StepUnderflow { t: f64, step: f64, min_step: f64 },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    StepBudget { t: f64, max_steps: usize },

    #[error("non-finite value in integrator state at t = {t}")]
    NonFinite { t: f64 },

    #[error("relative drift {drift:.3e} of a conserved quantity ({quantity}) exceeds {tol:.3e}")]
    ConservationDrift {
        quantity: &'static str,
        drift: f64,
        tol: f64,
    },

    #[error("angular momentum must be nonzero")]
    ZeroMomentum,

    #[error("momentum ({l1}, {l2}, {l3}) lies on the axis-1 frame singularity")]
    FrameSingular { l1: f64, l2: f64, l3: f64 },

    #[error("residual {residual:.3e} exceeds the fixed-point tolerance {tol:.3e}")]
    NotAFixedPoint { residual: f64, tol: f64 },

    #[error("stability mismatch at {family}: eigenvalues say {eigen}, inequalities say {predicted}")]
    StabilityInconsistency {
        family: String,
        eigen: String,
        predicted: String,
    },

    #[error("portrait is {graph} but the coefficients classify as {expected}")]
    ClassificationMismatch { graph: String, expected: String },

    #[error("inventory contains degenerate fixed points; enable allow_degenerate to trace")]
    DegenerateInventory,

    #[error("cannot seed separatrices at fixed point {id}: {reason}")]
    SeedFailure { id: usize, reason: String },

    #[error("{count} separatrix branch(es) did not reach a fixed point")]
    DanglingEdge { count: usize },

    #[error("trajectory spans {span} but needs at least one window of {window}")]
    TooShortTrajectory { span: f64, window: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical failure, 4 classification inconsistency.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigParse(_) => 2,
            Error::StabilityInconsistency { .. } | Error::ClassificationMismatch { .. } => 4,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}
