use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("probability level {0} outside (0, 1]")]
    Domain(f64),

    #[error("index {index} out of range for {len} cells")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("marginal mismatch: max deviation {max_deviation:e} exceeds {tolerance:e}")]
    MarginalMismatch { max_deviation: f64, tolerance: f64 },

    #[error("coupling infeasible: row L1 error {row_error:e}, column L1 error {col_error:e}")]
    Infeasible { row_error: f64, col_error: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate slice {index}: conditional mass {mass:e} below floor")]
    DegenerateSlice { index: usize, mass: f64 },

    #[error("degenerate rectangle: cells must be distinct (a={a}, a1={a1}, b={b}, b1={b1})")]
    DegenerateRectangle {
        a: usize,
        a1: usize,
        b: usize,
        b1: usize,
    },

    #[error("IPFP did not converge after {iterations} iterations (residual {residual:e})")]
    IpfpNotConverged { iterations: usize, residual: f64 },

    #[error(
        "no descent at first iteration: line search failed (directional derivative {slope:e})"
    )]
    NoDescent { slope: f64 },

    #[error("unbalanced instance: supply {supply} vs demand {demand}")]
    Unbalanced { supply: f64, demand: f64 },

    #[error("invalid transport instance: {0}")]
    InvalidInstance(String),

    #[error("instance too large for the exact oracle: {variables} variables exceeds {limit}")]
    SizeLimit { variables: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
