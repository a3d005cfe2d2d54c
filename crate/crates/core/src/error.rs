use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrassmannError {
    #[error("generator counts differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("generator {generator} out of range 1..={q}")]
    GeneratorOutOfRange { generator: usize, q: usize },
    #[error("multi-index labels not strictly increasing: {0:?}")]
    NotIncreasing(Vec<usize>),
    #[error("element with zero body is not invertible")]
    NotInvertible,
    #[error("body matrix is singular")]
    SingularBody,
    #[error("matrix is not square or right-hand side has the wrong length")]
    NotSquare,
    #[error("parse error at {pos}: {message}")]
    Parse { pos: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier '{name}' at {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("variable x{index} out of range for chart dimension {n}")]
    VariableOutOfRange { index: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{expr}`")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    /// Rendered offending subexpression.
    pub expr: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalErrorKind {
    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of a non-positive number")]
    LogDomain,
    #[error("square root of a negative number")]
    SqrtDomain,
    #[error("non-finite result")]
    NonFinite,
    #[error("wrong number of coordinates")]
    WrongArity,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("chart mismatch: {0} vs {1}")]
    ChartMismatch(String, String),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("superfunction has a component of degree {degree} and is not in the degree <= 1 sector")]
    NotFiberAffine { degree: usize },
    #[error("superfunction of mixed parity where a homogeneous one is required")]
    MixedParity,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Grassmann(#[from] GrassmannError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("invalid connection: {0}")]
    InvalidConnection(String),
    #[error("metric is degenerate at {point:?}")]
    Degenerate { point: Vec<f64> },
    #[error("Levi-Civita system inconsistent at {point:?}: residual {residual:e}")]
    Inconsistent { point: Vec<f64>, residual: f64 },
    #[error("operation requires an odd metric (|g| = 1)")]
    RequiresOddMetric,
    #[error("frame change is singular at {point:?}")]
    SingularFrame { point: Vec<f64> },
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl From<EvalError> for GeometryError {
    fn from(e: EvalError) -> Self {
        GeometryError::Field(FieldError::Eval(e))
    }
}

impl From<GrassmannError> for GeometryError {
    fn from(e: GrassmannError) -> Self {
        GeometryError::Field(FieldError::Grassmann(e))
    }
}

impl From<ExprError> for GeometryError {
    fn from(e: ExprError) -> Self {
        GeometryError::Field(FieldError::Expr(e))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid integration parameters: {0}")]
    InvalidParameters(String),
    #[error("point {point:?} lies outside the chart box")]
    OutsideChart { point: Vec<f64> },
    #[error("integration left the chart at t = {t}")]
    Truncated { t: f64, partial: Box<crate::geodesic::CurveSample> },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("{pointer}: {source}")]
    Expression { pointer: String, source: FieldError },
    #[error("{0}")]
    Incompatible(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
