use thiserror::Error;

/// Errors produced by the cascade solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid truncation dimension {0} (every mode needs at least 2 Fock states)")]
    InvalidDimension(usize),

    #[error("mode index {mode} out of range for a {n_modes}-mode system")]
    ModeOutOfRange { mode: usize, n_modes: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("steady state is not unique (singular or near-singular system, {0})")]
    AmbiguousSteadyState(String),

    #[error("solver did not converge: residual {residual:.3e} exceeds {tolerance:.1e}")]
    NotConverged { residual: f64, tolerance: f64 },

    #[error("time step underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("trace drifted by {drift:.3e} during time evolution")]
    TraceDrift { drift: f64 },

    #[error("trajectory integrator failed: {0}")]
    IntegratorFailure(String),

    #[error("polar expansion is degenerate: mode {mode} has zero population")]
    DegenerateExpansion { mode: usize },

    #[error("fixed point is unstable: drift matrix has an eigenvalue with real part {max_real:.3e}")]
    UnstablePoint { max_real: f64 },

    #[error("g2 is undefined for a state with vanishing population ({population:.3e})")]
    UndefinedG2 { population: f64 },

    #[error("singular parameter combination: {0}")]
    SingularParameters(String),

    #[error("the two modes of a bipartite witness must differ (got {0} twice)")]
    SameModeTwice(usize),

    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),

    #[error("two evaluation routes disagree: {0}")]
    RouteDisagreement(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
}

pub type Result<T> = std::result::Result<T, Error>;
