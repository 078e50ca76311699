use thiserror::Error;

/// Errors produced by configuration parsing and validation.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("missing required keys: {0}")]
    MissingKeys(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("block length {block_len} ns is not an integer multiple of dt {dt} ns")]
    NonCommensurateBlock { block_len: f64, dt: f64 },
}

/// Errors produced by the solvers and the iteration driver.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("linear solve failed for group {group} at step {step}: {reason}")]
    LinearSolve {
        group: usize,
        step: usize,
        reason: String,
    },
    #[error("degenerate cell {cell}: {reason}")]
    DegenerateCell { cell: usize, reason: String },
    #[error(
        "temperature Newton failed in cell {cell} after {iters} iterations \
         (T={t:.6e}, E={e:.6e}, residual={residual:.3e})"
    )]
    NewtonNonConvergence {
        cell: usize,
        iters: usize,
        t: f64,
        e: f64,
        residual: f64,
    },
    #[error(
        "grey solve did not reach residual {tol:.1e} after {iters} iterations (residual={residual:.3e})"
    )]
    GreyNonConvergence {
        iters: usize,
        tol: f64,
        residual: f64,
    },
    #[error(
        "inner cycle exceeded {max_inner} iterations at step {step} (last rel change E={xi_e:.3e}, T={xi_t:.3e})"
    )]
    InnerStagnation {
        step: usize,
        max_inner: usize,
        xi_e: f64,
        xi_t: f64,
    },
    #[error(
        "outer cycle for block {block} exceeded {max_outer} iterations; \
         xi_E history: {xi_e_history:?}"
    )]
    OuterStagnation {
        block: usize,
        max_outer: usize,
        xi_e_history: Vec<f64>,
        xi_t_history: Vec<f64>,
    },
}

/// Errors produced by the I/O layer.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data in {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

/// Top-level error for the library surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("diagnostics error: {0}")]
    Diagnostics(String),
}

pub type Result<T> = std::result::Result<T, Error>;
