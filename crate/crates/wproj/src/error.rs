//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("cost matrix is not symmetric positive definite: offending eigenvalue {eigenvalue}")]
    InvalidCost { eigenvalue: f64 },

    #[error("data format error at row {row}, column {col}: {message}")]
    DataFormat {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("V_n is singular or near-singular (condition number {cond:.3e})")]
    SingularVn { cond: f64 },

    #[error("W_n is singular")]
    SingularWn,

    #[error("model lacks the derivatives required for this operation: {0}")]
    MissingDerivatives(String),

    #[error("order-3 expansion requested but L_n was not computed")]
    MissingL,

    #[error("inner transport subproblem did not converge at sample {sample}")]
    InnerNonconvergence { sample: usize },

    #[error("inner transport subproblem is unbounded at sample {sample} (|zeta| kappa1 |Sigma| >= 2)")]
    UnboundedInner { sample: usize },

    #[error("outer dual ascent did not converge within the iteration cap")]
    OuterNonconvergence,

    #[error("empirical likelihood undefined: 0 not strictly inside the convex hull of h(X_i)")]
    ElUndefined,

    #[error("closed-form quadratic oracle infeasible: 1 + Delta_n/sqrt(n) < 0")]
    InfeasibleOracle,

    #[error("invalid moment inputs: {0}")]
    InvalidMoments(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code classification: 1 statistical, 2 usage/config, 3 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ElUndefined
            | Error::InfeasibleOracle
            | Error::SingularVn { .. }
            | Error::SingularWn
            | Error::InvalidMoments(_) => 1,
            Error::InnerNonconvergence { .. }
            | Error::UnboundedInner { .. }
            | Error::OuterNonconvergence => 3,
            _ => 2,
        }
    }
}
