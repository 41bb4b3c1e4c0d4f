use thiserror::Error;

use crate::tree::NodeId;

/// Errors reported by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("jump probability lambda*dt = {value} at step {step} must be below 1")]
    IntensityTooLarge { step: usize, value: f64 },
    #[error("node {node}: expected {expected} child values, got {got}")]
    ChildValues {
        node: NodeId,
        expected: usize,
        got: usize,
    },
    #[error("node {0} has no parent (no left limit at the root)")]
    RootHasNoLeftLimit(NodeId),
    #[error("node {0} is terminal (no interval value)")]
    TerminalNode(NodeId),
    #[error("process length {got} does not match tree size {expected}")]
    ProcessLength { expected: usize, got: usize },
    #[error("inadmissible barriers: {0}")]
    Inadmissible(String),
    #[error("not a strong supermartingale at node {node}: {reason}")]
    NotSupermartingale { node: NodeId, reason: String },
    #[error("implicit step refused: K*dt = {0} must be below 1")]
    NoContraction(f64),
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("unknown driver `{0}`")]
    UnknownDriver(String),
    #[error("invalid driver parameters: {0}")]
    DriverParams(String),
    #[error("singular volatility matrix (det = {0:e})")]
    SingularSigma(f64),
    #[error("invalid market: {0}")]
    InvalidMarket(String),
    #[error("unknown payoff builder `{0}`")]
    UnknownBuilder(String),
    #[error("invalid stopping time: {0}")]
    InvalidStopping(String),
    #[error("theta is not below tau on node {0}")]
    NotOrdered(NodeId),
    #[error("tree has {nodes} nodes, enumeration is capped at {cap}")]
    EnumerationTooLarge { nodes: usize, cap: usize },
    #[error("regularity precondition failed: {0}")]
    Regularity(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
