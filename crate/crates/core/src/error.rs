use thiserror::Error;

use crate::graph::NodeId;
use crate::percolation::PercolationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("node id {0} out of range")]
    NodeOutOfRange(usize),

    #[error("edge ({u}, {v}) given twice with conflicting weights {first} and {second}")]
    ConflictingEdge {
        u: NodeId,
        v: NodeId,
        first: f64,
        second: f64,
    },

    #[error("matrix entries ({i}, {j}) = {a} and ({j}, {i}) = {b} are not symmetric")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },

    #[error("node {node} has a self-loop but {reason}")]
    CannotAbsorb { node: NodeId, reason: String },

    #[error("node {j} is not in the primary neighborhood of {i}")]
    NotInNeighborhood { i: NodeId, j: NodeId },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("bounded mode requested but the loop bound is not fulfilled at r = {r}")]
    LoopBoundNotFulfilled { r: usize },

    #[error("mixed scalar and series generating values")]
    ModeMismatch,

    #[error("message passing diverged (non-finite value at iteration {iteration})")]
    Diverged { iteration: usize },

    #[error("message {message} has positive imaginary part {imag:e} at iteration {iteration}")]
    ImaginarySign {
        message: usize,
        imag: f64,
        iteration: usize,
    },

    #[error("singular local system")]
    Singular,

    #[error("percolation did not converge within {} sweeps (delta {:e})", .0.iterations, .0.delta)]
    PercolationNotConverged(Box<PercolationReport>),

    #[error("{what}: {value} exceeds the limit {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
