//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rank deficiency at column {column}: deflated norm {norm:.3e} below tolerance")]
    RankDeficient { column: usize, norm: f64 },

    #[error("singular system in {context}")]
    Singular { context: &'static str },

    #[error("kappa(M) = {kappa} >= 1: projected equation has no guaranteed unique solution")]
    KappaTooLarge { kappa: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("iterate diverged at step {step}: |theta| = {norm:.3e}")]
    Diverged { step: usize, norm: f64 },

    #[error("ellipticity bounds violated at x = {x}: a(x) = {value}")]
    EllipticityViolated { x: f64, value: f64 },

    #[error("giant component has {size} vertices, need at least {need}")]
    GiantTooSmall { size: usize, need: usize },

    #[error("feature second-moment matrix rank-deficient after {retries} retries (lambda_min = {lambda_min:.3e})")]
    FeatureRankDeficient { retries: usize, lambda_min: f64 },

    #[error("residual {residual:.3e} exceeds tolerance {tol:.3e} in {context}")]
    ResidualTooLarge {
        residual: f64,
        tol: f64,
        context: &'static str,
    },

    #[error("orthonormality violated: max deviation {deviation:.3e} exceeds {tol:.1e}")]
    NotOrthonormal { deviation: f64, tol: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
