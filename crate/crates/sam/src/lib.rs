//! Sparse hetero-associative memory.
//!
//! Messages are binary vectors split into clusters with exactly one active
//! unit per cluster. Pairs are stored into a binary matrix by a
//! coefficient-wise max of outer products, and retrieved by a single
//! matrix-vector pass followed by a per-cluster winner-takes-all.

mod capacity;
mod memory;
mod message;
mod serialize;

pub use capacity::{capacity_sweep, CapacityRow, SweepConfig};
pub use memory::{HeteroMemory, RetrievedScores};
pub use message::SparseMessage;
pub use serialize::MEMORY_MAGIC;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamError {
    #[error("dimension must be positive, got {name} = {value}")]
    InvalidDimension { name: &'static str, value: usize },
    #[error("cluster index {index} out of range for cluster size {cluster_size}")]
    IndexOutOfRange { index: usize, cluster_size: usize },
    #[error("message geometry ({clusters},{cluster_size}) does not match memory ({expect_clusters},{expect_cluster_size})")]
    GeometryMismatch {
        clusters: usize,
        cluster_size: usize,
        expect_clusters: usize,
        expect_cluster_size: usize,
    },
    #[error("stored messages must not contain blank clusters (cluster {0} is blank)")]
    BlankInStore(usize),
    #[error("active list length {0} does not match cluster count {1}")]
    ActiveLengthMismatch(usize, usize),
    #[error("capacity sweep needs a nonempty message count list and trials >= 1")]
    BadSweepConfig,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad memory file: {0}")]
    BadFormat(String),
}

pub type Result<T> = std::result::Result<T, SamError>;
