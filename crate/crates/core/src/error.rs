use thiserror::Error;

/// Errors surfaced by the numerical core.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("bidegree overflow: ({p},{q}) does not fit in complex dimension {n}")]
    DegreeOverflow { p: usize, q: usize, n: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("metric not positive definite: min pencil eigenvalue {min_eig:.3e} at grid point {at}")]
    MetricNotPositive { min_eig: f64, at: usize },

    #[error("metric perturbation too large: positivity fails at eps = {requested}, max admissible eps ~= {max_admissible:.6}")]
    PerturbationTooLarge { requested: f64, max_admissible: f64 },

    #[error("cone violation: Gamma_2 margins (m1, m2) = ({m1:.3e}, {m2:.3e}) {context}")]
    ConeViolation { m1: f64, m2: f64, context: String },

    #[error("kernel extraction ambiguous: {0}")]
    AmbiguousKernel(String),

    #[error("kernel generator changes sign: min value {min_val:.3e}")]
    KernelNotPositive { min_val: f64 },

    #[error("Krylov solver failed to converge: rel residual {rel_resid:.3e} after {iters} iterations")]
    KrylovStagnation { rel_resid: f64, iters: usize },

    #[error("Newton line search stagnated at residual {resid:.3e} (iteration {iter})")]
    LineSearchStagnation { resid: f64, iter: usize },

    #[error("Newton failed: {0}")]
    NewtonFailure(String),

    #[error("continuation step size underflow at t = {t:.6} (dt = {dt:.3e}); last accepted state retained")]
    StepUnderflow { t: f64, dt: f64 },

    #[error("pointwise ratio not constant: spread {spread:.3e} exceeds {tol:.1e} (worst point {at})")]
    NonConstantRatio { spread: f64, tol: f64, at: usize },

    #[error("invalid problem data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("field dump format error: {0}")]
    DumpFormat(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
