use crate::memory::HeteroMemory;
use crate::message::SparseMessage;
use crate::{Result, SamError};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub in_clusters: usize,
    pub in_cluster_size: usize,
    pub out_clusters: usize,
    pub out_cluster_size: usize,
    pub message_counts: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

/// One sweep row: error rates after storing `m` random pairs, averaged over
/// trials. `message_error` is the fraction of stored pairs not retrieved
/// exactly; `symbol_error` the fraction of output clusters retrieved wrong.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub m: usize,
    pub message_error: f64,
    pub symbol_error: f64,
}

fn trial_seed(seed: u64, trial: u64) -> u64 {
    // splitmix64 over (seed, trial) keeps trials independent of each other
    let mut z = seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Store `m` uniformly random pairs for each entry of `message_counts` and
/// report how often stored pairs fail to be retrieved from their full probe.
/// Every trial draws one pair sequence and reuses prefixes across the `m`
/// grid, so rows are comparable under a fixed seed.
pub fn capacity_sweep(config: &SweepConfig) -> Result<Vec<CapacityRow>> {
    if config.message_counts.is_empty() || config.trials == 0 {
        return Err(SamError::BadSweepConfig);
    }
    let mut counts = config.message_counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let max_m = *counts.last().expect("nonempty");

    let mut msg_err_sum = vec![0.0f64; counts.len()];
    let mut sym_err_sum = vec![0.0f64; counts.len()];
    for trial in 0..config.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, trial as u64));
        let pairs: Vec<(SparseMessage, SparseMessage)> = (0..max_m)
            .map(|_| {
                (
                    SparseMessage::random(config.in_clusters, config.in_cluster_size, &mut rng),
                    SparseMessage::random(config.out_clusters, config.out_cluster_size, &mut rng),
                )
            })
            .collect();
        let mut mem = HeteroMemory::new(
            config.in_clusters,
            config.in_cluster_size,
            config.out_clusters,
            config.out_cluster_size,
        )?;
        let mut stored = 0usize;
        for (ci, &m) in counts.iter().enumerate() {
            while stored < m {
                let (x, y) = &pairs[stored];
                mem.store(x, y)?;
                stored += 1;
            }
            let mut bad_msgs = 0usize;
            let mut bad_syms = 0usize;
            for (x, y) in &pairs[..m] {
                let got = mem.retrieve(x)?;
                if &got != y {
                    bad_msgs += 1;
                }
                bad_syms += got
                    .active()
                    .iter()
                    .zip(y.active())
                    .filter(|(a, b)| a != b)
                    .count();
            }
            msg_err_sum[ci] += bad_msgs as f64 / m as f64;
            sym_err_sum[ci] += bad_syms as f64 / (m * config.out_clusters) as f64;
        }
    }
    let t = config.trials as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(ci, m)| CapacityRow {
            m,
            message_error: msg_err_sum[ci] / t,
            symbol_error: sym_err_sum[ci] / t,
        })
        .collect())
}
