use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by parsing, evaluation and the dynamics solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed expression source; `pos` is the 1-based character position.
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    /// An expression references a variable outside the declared list.
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    /// Evaluation left the function domain (log/sqrt of a negative number,
    /// division by zero, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A finite-difference operation needs at least three grid nodes.
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    /// A documented precondition of the called operation does not hold.
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    /// The fiber Hessian of the Lagrangian is (numerically) singular.
    #[error("singular Legendre transform: {0}")]
    SingularLegendre(String),

    /// An iterative solver exhausted its iteration budget.
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    /// An integrator state picked up a NaN or infinity.
    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),

    /// Wraps a right-hand-side failure with the integration time attached.
    #[error("integration failed at t = {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    /// The constraint multiplier system is numerically singular.
    #[error("degenerate constraint system: {0}")]
    DegenerateConstraint(String),

    /// The joint (xi-dot, mu-dot) vaconomic system is numerically singular.
    #[error("degenerate vaconomic system: {0}")]
    DegenerateVaconomic(String),

    /// The constraint frame is degenerate with respect to the metric.
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    /// Array shapes do not match the declared dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A declared model invariant failed its load-time check.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// Model-file syntax error with source location.
    #[error("model parse error at line {line}, column {col}: {msg}")]
    ModelParse {
        line: usize,
        col: usize,
        msg: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach an integration time to an error coming out of an RHS callback.
    pub fn at_time(self, t: f64) -> Error {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }
}
