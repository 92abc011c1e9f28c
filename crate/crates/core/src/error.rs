use thiserror::Error;

/// Errors produced while building or solving the grid model.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("singular system while solving {context}")]
    SingularSystem { context: String },
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
}

/// Errors from the reference optimizer.
#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("cost matrix {name} is not symmetric positive semidefinite (min eigenvalue {min_eig:.3e})")]
    IndefiniteCost { name: String, min_eig: f64 },
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("problem infeasible: constraint {constraint} violated by {violation:.6e} at the least-infeasible point")]
    Infeasible { constraint: String, violation: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Errors from the closed-loop simulator.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("plant collapse at node {node}: constant-power solve did not converge (mismatch {mismatch:.3e} A after {iterations} iterations)")]
    PlantCollapse {
        node: String,
        mismatch: f64,
        iterations: usize,
    },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

/// Errors while parsing topology or scenario files.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{path}:{line}:{column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
