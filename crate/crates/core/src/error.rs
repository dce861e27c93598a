use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("radius {radius} outside the grid range (0, {extent}]")]
    RadiusOutOfRange { radius: f64, extent: f64 },
    #[error("grid function length {got} does not match grid with {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("M-matrix invariant violated at node {node}: {detail}")]
    NotMMatrix { node: usize, detail: String },
    #[error("singular pivot at row {row}")]
    SingularPivot { row: usize },
    #[error("exhaustion stages not monotone: stage {stage}, node {node}, drop {drop:e}")]
    NonMonotone { stage: usize, node: usize, drop: f64 },
    #[error("non-positive value {value:e} at node {node}: {context}")]
    NonPositive { node: usize, value: f64, context: String },
    #[error("newton iteration did not converge at t = {t} (residual {residual:e})")]
    NewtonDiverged { t: f64, residual: f64 },
    #[error("positivity floor breached at t = {t}, node {node}: u = {value:e}")]
    PositivityFloor { t: f64, node: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cutoff exponent k = {k} must exceed 2*alpha = {bound}")]
    CutoffExponent { k: u32, bound: f64 },
    #[error("non-finite value at node {node}: {context}")]
    NonFinite { node: usize, context: String },
    #[error("regular start requires v'(0) = 0 (got {0}); pass the singular-start flag to override")]
    IrregularStart(f64),
    #[error("riccati solution does not reach a positive asymptote")]
    NoAsymptote,
    #[error("solution blows up near r = {radius}")]
    BlowUp { radius: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("residual {residual:e} exceeds bound {bound:e}: {context}")]
    Residual { residual: f64, bound: f64, context: String },
}

pub type Result<T> = std::result::Result<T, Error>;
