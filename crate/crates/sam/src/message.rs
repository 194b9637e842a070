use crate::{Result, SamError};
use rand::Rng;

/// Binary vector of `clusters` clusters, each `cluster_size` long, with
/// exactly one active unit per cluster. A cluster may be blank (`None`),
/// which is only meaningful for retrieval probes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMessage {
    clusters: usize,
    cluster_size: usize,
    active: Vec<Option<usize>>,
}

impl SparseMessage {
    /// Build from cluster-local active indices; `None` marks a blank cluster.
    pub fn new(clusters: usize, cluster_size: usize, active: Vec<Option<usize>>) -> Result<Self> {
        if clusters == 0 {
            return Err(SamError::InvalidDimension {
                name: "clusters",
                value: clusters,
            });
        }
        if cluster_size == 0 {
            return Err(SamError::InvalidDimension {
                name: "cluster_size",
                value: cluster_size,
            });
        }
        if active.len() != clusters {
            return Err(SamError::ActiveLengthMismatch(active.len(), clusters));
        }
        if let Some(&Some(bad)) = active.iter().find(|a| a.is_some_and(|i| i >= cluster_size)) {
            return Err(SamError::IndexOutOfRange {
                index: bad,
                cluster_size,
            });
        }
        Ok(Self {
            clusters,
            cluster_size,
            active,
        })
    }

    /// Complete message from one index per cluster.
    pub fn from_indices(clusters: usize, cluster_size: usize, indices: &[usize]) -> Result<Self> {
        Self::new(
            clusters,
            cluster_size,
            indices.iter().map(|&i| Some(i)).collect(),
        )
    }

    /// Uniformly random complete message.
    pub fn random(clusters: usize, cluster_size: usize, rng: &mut impl Rng) -> Self {
        let active = (0..clusters)
            .map(|_| Some(rng.random_range(0..cluster_size)))
            .collect();
        Self {
            clusters,
            cluster_size,
            active,
        }
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn cluster_size(&self) -> usize {
        self.cluster_size
    }

    pub fn active(&self) -> &[Option<usize>] {
        &self.active
    }

    pub fn is_complete(&self) -> bool {
        self.active.iter().all(|a| a.is_some())
    }

    pub fn len(&self) -> usize {
        self.clusters * self.cluster_size
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Dense 0/1 form of length clusters × cluster_size; blank clusters are
    /// all-zero segments.
    pub fn dense(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len()];
        for (c, a) in self.active.iter().enumerate() {
            if let Some(i) = a {
                out[c * self.cluster_size + i] = 1;
            }
        }
        out
    }

    /// Erase the given clusters, producing a partial probe.
    pub fn with_blanks(&self, blank_clusters: &[usize]) -> Self {
        let mut active = self.active.clone();
        for &c in blank_clusters {
            if c < active.len() {
                active[c] = None;
            }
        }
        Self {
            clusters: self.clusters,
            cluster_size: self.cluster_size,
            active,
        }
    }
}
