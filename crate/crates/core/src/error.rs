use crate::geometry::Point;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({}, {}) lies outside the domain", .0.re, .0.im)]
    OutsideDomain(Point),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("hull resolution {rho} too coarse for loop of diameter {diameter}")]
    Resolution { rho: f64, diameter: f64 },
    #[error("query point within {tol} of the loop path")]
    Proximity { tol: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cutoff {requested} is below the sampling cutoff {sampled}")]
    CutoffMismatch { requested: f64, sampled: f64 },
    #[error("coincident points: mass is infinite on the diagonal")]
    Diagonal,
    #[error("missing table entry: {0}")]
    MissingEntry(String),
    #[error("table quality: {0}")]
    TableQuality(String),
    #[error("covariance factorization failed")]
    Factorization,
    #[error("parameter regime violated: {0}")]
    Regime(String),
    #[error("stored table does not match the requested build: {0}")]
    StaleTable(String),
    #[error("quadrature grid does not fit the domain: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
