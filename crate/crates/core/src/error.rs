use thiserror::Error;

use crate::geometry::{Edge, Vertex};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell index {index} out of range for a grid with {count} cells")]
    CellOutOfRange { index: usize, count: usize },

    #[error("edge {0:?} does not belong to the grid")]
    EdgeOutOfRange(Edge),

    #[error("invalid loop: {0}")]
    InvalidLoop(String),

    #[error("degenerate segment {index}: endpoints coincide")]
    DegenerateSegment { index: usize },

    #[error("measure is not divergence-free: divergence {value:e} at vertex ({}, {})", vertex.0, vertex.1)]
    NotDivergenceFree { vertex: Vertex, value: f64 },

    #[error("grids do not match")]
    GridMismatch,

    #[error("kernel singularity: evaluation point coincides with a source")]
    Singular,

    #[error("invalid measurement setup: {0}")]
    InvalidSetup(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("operator matrix of {rows}x{cols} exceeds the dense size guard")]
    TooLarge { rows: usize, cols: usize },

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error("cycle enumeration guard exceeded ({0} cycles); use sampled mode")]
    EnumerationGuard(usize),

    #[error("cycle space dimension {0} exceeds the brute-force oracle limit of 3")]
    OracleDimension(usize),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
