use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate lattice basis: |det| = {det:e}")]
    DegenerateBasis { det: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field is numerically singular at node {node}")]
    SingularPoint { node: usize },
    #[error("cell grid {cell:?} cannot be sampled exactly at eps = 1/{k} on a torus grid {torus:?} spanning {periods:?} periods")]
    Incommensurable {
        cell: Vec<usize>,
        torus: Vec<usize>,
        periods: Vec<usize>,
        k: usize,
    },
    #[error("symbol is rank deficient: sigma_min = {sigma_min:e}")]
    RankDeficient { sigma_min: f64 },
    #[error("Krylov solver failed after {iterations} iterations: relative residual {residual:e} > {target:e}")]
    SolverDiverged {
        iterations: usize,
        residual: f64,
        target: f64,
    },
    #[error("coefficient is not positive definite at node {node}")]
    NotPositive { node: usize },
    #[error("assembled symbol is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("potential has nonzero mean {mean:e}")]
    NonzeroMean { mean: f64 },
    #[error("ground state changes sign on the grid")]
    SignFlip,
    #[error("effective mode matrix {mode} is singular (condition {condition:e})")]
    ModeSingular { mode: usize, condition: f64 },
    #[error("spectral parameter {re} + {im}i lies on the excluded half-line")]
    InadmissibleZeta { re: f64, im: f64 },
    /// `estimate` is the largest `‖Tx‖` seen, a valid lower bound for the norm.
    #[error("power iteration did not settle (last relative change {change:e}, best estimate {estimate:e})")]
    NoConvergence { change: f64, estimate: f64 },
    #[error("argument {value} out of range")]
    OutOfRange { value: f64 },
    #[error("rate fit needs at least 3 points, got {got}")]
    InsufficientPoints { got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
