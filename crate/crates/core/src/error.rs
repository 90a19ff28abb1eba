use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An admissibility rule of the model was violated. `rule` is the
    /// short rule tag (for example `A2` or `D1`).
    #[error("{rule} violated: {reason}")]
    Admissibility { rule: &'static str, reason: String },

    #[error("value {value} outside the singular domain (-1, 1){}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    SingularDomain { value: f64, node: Option<usize> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("mesh refinement level {level} exceeds the supported maximum {max}")]
    Resource { level: u32, max: u32 },

    #[error("degenerate triangle {triangle} (signed area {area:e})")]
    DegenerateElement { triangle: usize, area: f64 },

    #[error("right-hand side is not mean-compatible (defect {defect:e})")]
    Incompatible { defect: f64 },

    #[error("trace constraint violated by {defect:e}")]
    ConstraintViolation { defect: f64 },

    #[error("{0} is not supported in this regime")]
    UnsupportedRegime(&'static str),

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e}); try reducing dt")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}
