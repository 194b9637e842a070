use crate::message::SparseMessage;
use crate::{Result, SamError};

/// Binary storage matrix for message pairs. `w` holds one byte per cell,
/// row-major, rows indexing the output dimension (c'·ℓ') and columns the
/// input dimension (c·ℓ).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroMemory {
    in_clusters: usize,
    in_cluster_size: usize,
    out_clusters: usize,
    out_cluster_size: usize,
    w: Vec<u8>,
    stored_count: u32,
}

/// Retrieval result along with the raw integer scores per output unit.
#[derive(Debug, Clone)]
pub struct RetrievedScores {
    pub message: SparseMessage,
    pub scores: Vec<u32>,
}

impl HeteroMemory {
    pub fn new(
        in_clusters: usize,
        in_cluster_size: usize,
        out_clusters: usize,
        out_cluster_size: usize,
    ) -> Result<Self> {
        for (name, value) in [
            ("in_clusters", in_clusters),
            ("in_cluster_size", in_cluster_size),
            ("out_clusters", out_clusters),
            ("out_cluster_size", out_cluster_size),
        ] {
            if value == 0 {
                return Err(SamError::InvalidDimension { name, value });
            }
        }
        let rows = out_clusters * out_cluster_size;
        let cols = in_clusters * in_cluster_size;
        Ok(Self {
            in_clusters,
            in_cluster_size,
            out_clusters,
            out_cluster_size,
            w: vec![0u8; rows * cols],
            stored_count: 0,
        })
    }

    pub fn in_clusters(&self) -> usize {
        self.in_clusters
    }
    pub fn in_cluster_size(&self) -> usize {
        self.in_cluster_size
    }
    pub fn out_clusters(&self) -> usize {
        self.out_clusters
    }
    pub fn out_cluster_size(&self) -> usize {
        self.out_cluster_size
    }
    pub fn rows(&self) -> usize {
        self.out_clusters * self.out_cluster_size
    }
    pub fn cols(&self) -> usize {
        self.in_clusters * self.in_cluster_size
    }
    pub fn stored_count(&self) -> u32 {
        self.stored_count
    }
    pub fn matrix(&self) -> &[u8] {
        &self.w
    }

    pub(crate) fn from_parts(
        in_clusters: usize,
        in_cluster_size: usize,
        out_clusters: usize,
        out_cluster_size: usize,
        w: Vec<u8>,
        stored_count: u32,
    ) -> Result<Self> {
        let mut mem = Self::new(in_clusters, in_cluster_size, out_clusters, out_cluster_size)?;
        if w.len() != mem.w.len() {
            return Err(SamError::BadFormat(format!(
                "matrix payload length {} does not match dimensions",
                w.len()
            )));
        }
        if let Some(bad) = w.iter().find(|&&b| b > 1) {
            return Err(SamError::BadFormat(format!("non-binary cell value {bad}")));
        }
        mem.w = w;
        mem.stored_count = stored_count;
        Ok(mem)
    }

    fn check_input(&self, m: &SparseMessage) -> Result<()> {
        if m.clusters() != self.in_clusters || m.cluster_size() != self.in_cluster_size {
            return Err(SamError::GeometryMismatch {
                clusters: m.clusters(),
                cluster_size: m.cluster_size(),
                expect_clusters: self.in_clusters,
                expect_cluster_size: self.in_cluster_size,
            });
        }
        Ok(())
    }

    fn check_output(&self, m: &SparseMessage) -> Result<()> {
        if m.clusters() != self.out_clusters || m.cluster_size() != self.out_cluster_size {
            return Err(SamError::GeometryMismatch {
                clusters: m.clusters(),
                cluster_size: m.cluster_size(),
                expect_clusters: self.out_clusters,
                expect_cluster_size: self.out_cluster_size,
            });
        }
        Ok(())
    }

    /// Store the pair (x, y): W ← max(W, y xᵀ) coefficient-wise. Since both
    /// messages are one-hot per cluster this sets exactly the
    /// in_clusters × out_clusters cells at the active row/column pairs.
    pub fn store(&mut self, x: &SparseMessage, y: &SparseMessage) -> Result<()> {
        self.check_input(x)?;
        self.check_output(y)?;
        if let Some(c) = x.active().iter().position(|a| a.is_none()) {
            return Err(SamError::BlankInStore(c));
        }
        if let Some(c) = y.active().iter().position(|a| a.is_none()) {
            return Err(SamError::BlankInStore(c));
        }
        let cols = self.cols();
        for (yc, ya) in y.active().iter().enumerate() {
            let row = yc * self.out_cluster_size + ya.expect("checked complete");
            for (xc, xa) in x.active().iter().enumerate() {
                let col = xc * self.in_cluster_size + xa.expect("checked complete");
                self.w[row * cols + col] = 1;
            }
        }
        self.stored_count += 1;
        Ok(())
    }

    /// Single-pass retrieval: z = W · dense(probe), then a per-output-cluster
    /// winner-takes-all over z with ties broken toward the lowest index.
    /// Blank probe clusters simply contribute nothing to z.
    pub fn retrieve(&self, probe: &SparseMessage) -> Result<SparseMessage> {
        Ok(self.retrieve_with_scores(probe)?.message)
    }

    /// Retrieval that also exposes the raw scores for analysis.
    pub fn retrieve_with_scores(&self, probe: &SparseMessage) -> Result<RetrievedScores> {
        self.check_input(probe)?;
        let cols = self.cols();
        let mut scores = vec![0u32; self.rows()];
        // z = W · x over the active columns only
        for (xc, xa) in probe.active().iter().enumerate() {
            let Some(i) = xa else { continue };
            let col = xc * self.in_cluster_size + i;
            for (row, s) in scores.iter_mut().enumerate() {
                *s += u32::from(self.w[row * cols + col]);
            }
        }
        let mut active = Vec::with_capacity(self.out_clusters);
        for j in 0..self.out_clusters {
            let seg = &scores[j * self.out_cluster_size..(j + 1) * self.out_cluster_size];
            let mut winner = 0;
            for (i, &s) in seg.iter().enumerate() {
                if s > seg[winner] {
                    winner = i;
                }
            }
            active.push(Some(winner));
        }
        let message = SparseMessage::new(self.out_clusters, self.out_cluster_size, active)?;
        Ok(RetrievedScores { message, scores })
    }
}
