use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: k = {k}, up_count = {up_count}, n = {n}")]
    IndexOutOfRange { k: usize, up_count: usize, n: usize },

    #[error("path length {got} does not match step index {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("crossing prices inconsistent with the lattice at step {step} (ratio {ratio})")]
    InconsistentPrices { step: usize, ratio: f64 },

    #[error("path-general payoff needs the full tree, but n = {n} exceeds the cutoff {cutoff}")]
    TreeTooLarge { n: usize, cutoff: usize },

    #[error("optimal next state ({u:.6}, {v:.6}) escapes the grid at step {k}")]
    GridEscape { k: usize, u: f64, v: f64 },

    #[error("transfer tree has no entry for step {k}, node {node}")]
    MissingNode { k: usize, node: usize },

    #[error("crossing record is incomplete ({found} of {needed} crossings)")]
    IncompleteRecord { found: usize, needed: usize },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
