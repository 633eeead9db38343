use thiserror::Error;

use crate::mesh::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mesh failed validation: {}", summarize(.0))]
    Validation(Vec<Violation>),

    #[error("element {0} is degenerate (content below threshold)")]
    DegenerateElement(usize),

    #[error("spectral grids differ: {0}")]
    GridMismatch(String),

    #[error(
        "boundary mesh is not watertight: signed content {with_origin} vs {with_shift} under a shifted auxiliary node"
    )]
    NotWatertight { with_origin: f64, with_shift: f64 },

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
