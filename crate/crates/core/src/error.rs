use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid dimensions: {0}")]
    BadDims(String),

    #[error("target tensor has zero norm")]
    ZeroTarget,

    #[error("factor of mode {mode} is the zero vector")]
    DegenerateFactor { mode: usize },

    #[error("updated factor of mode {mode} in sweep {sweep} has norm {norm:e} (target orthogonal to the fixed subspace)")]
    DegenerateIterate { sweep: usize, mode: usize, norm: f64 },

    #[error("initial guess represents the zero tensor")]
    ZeroInitial,

    #[error("the Gram route needs the preceding mode (in sweep order) to have just been updated")]
    NoPredecessor,

    #[error("tensor is orthogonal to the reference, tangent is infinite")]
    OrthogonalToReference,

    #[error("zero coefficient: {0}")]
    ZeroCoefficient(String),

    #[error("trace too short: need {needed} values, found {found}")]
    InsufficientTrace { needed: usize, found: usize },

    #[error("tensor order {0} is too small, need d >= 3")]
    OrderTooSmall(usize),

    #[error("no term dominates at the given point")]
    NoDominance,

    #[error("point is not stationary (residual {0:e})")]
    NotStationary(f64),

    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("rank {r} exceeds the smallest mode size {max}")]
    RankTooLarge { r: usize, max: usize },

    #[error("constraint violated: {0}")]
    ConstraintViolated(String),

    #[error("audit failed at record {index}: {reason}")]
    AuditFailure { index: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown figure `{0}`")]
    UnknownFigure(String),
}
