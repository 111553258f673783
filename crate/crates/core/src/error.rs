use thiserror::Error;

#[derive(Debug, Error)]
pub enum AfemError {
    #[error("non-conforming mesh: {0}")]
    NonConforming(String),
    #[error("degenerate triangle {cell} (area {area:e})")]
    Degenerate { cell: usize, area: f64 },
    #[error("invalid mesh input: {0}")]
    InvalidMesh(String),
    #[error("mesh from a different initial triangulation (domain {left:016x} vs {right:016x})")]
    DomainMismatch { left: u64, right: u64 },
    #[error("mesh is not a refinement of the coarse mesh: {0}")]
    NotARefinement(String),
    #[error("point ({x}, {y}) lies outside element {cell}")]
    OutsideElement { cell: usize, x: f64, y: f64 },
    #[error("function is not in the Morley space: {0}")]
    NotInSpace(String),
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("solver failure at iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<AfemError>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = AfemError> = std::result::Result<T, E>;
