//! Episodic few-shot evaluation with a nearest-class-mean classifier.

use crate::model::{ForwardMode, Model};
use crate::train::{prepare_batch, LabeledDataset};
use crate::util::rng_from;
use crate::{NetError, Result};
use dham_tensor::Graph;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct FewShotConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
    pub runs: usize,
    /// Number of candidate classes episodes sample from (the first `pool`
    /// classes of the feature table).
    pub pool: usize,
    pub seed: u64,
    /// Unit-normalize features before distances.
    pub normalize: bool,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 5,
            queries_per_class: 15,
            runs: 1000,
            pool: 20,
            seed: 0,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotResult {
    pub mean_accuracy: f64,
    /// 1.96·std/√runs.
    pub ci95_half_width: f64,
    pub runs: usize,
}

fn unit_norm(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Run `runs` episodes: sample `n_way` classes from the pool, `k_shot`
/// supports per class, classify `queries_per_class` held-out queries by the
/// nearest class mean in Euclidean distance.
pub fn ncm_fewshot(
    features_by_class: &[Vec<Vec<f64>>],
    cfg: &FewShotConfig,
) -> Result<FewShotResult> {
    if cfg.n_way < 2 || cfg.runs == 0 || cfg.k_shot == 0 || cfg.queries_per_class == 0 {
        return Err(NetError::BadConfig(
            "few-shot needs n_way >= 2, runs >= 1, k_shot >= 1, queries >= 1".into(),
        ));
    }
    if features_by_class.len() < cfg.pool || cfg.pool < cfg.n_way {
        return Err(NetError::InsufficientExamples(format!(
            "pool of {} classes from {} available, {}-way",
            cfg.pool,
            features_by_class.len(),
            cfg.n_way
        )));
    }
    let need = cfg.k_shot + cfg.queries_per_class;
    for (ci, class) in features_by_class.iter().take(cfg.pool).enumerate() {
        if class.len() < need {
            return Err(NetError::InsufficientExamples(format!(
                "class {ci} has {} examples, episodes need {need}",
                class.len()
            )));
        }
    }
    let dim = features_by_class[0][0].len();

    let mut features: Vec<Vec<Vec<f64>>> = features_by_class[..cfg.pool].to_vec();
    if cfg.normalize {
        for class in &mut features {
            for f in class {
                unit_norm(f);
            }
        }
    }

    let mut accs = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let mut rng = rng_from(cfg.seed, &[0x6570, run as u64]);
        // n_way distinct classes out of the pool
        let mut class_ids: Vec<usize> = (0..cfg.pool).collect();
        for j in 0..cfg.n_way {
            let pick = rng.random_range(j..cfg.pool);
            class_ids.swap(j, pick);
        }
        let chosen = &class_ids[..cfg.n_way];

        let mut means = vec![vec![0.0f64; dim]; cfg.n_way];
        let mut queries: Vec<(usize, &[f64])> = Vec::new();
        for (slot, &cls) in chosen.iter().enumerate() {
            let examples = &features[cls];
            let mut order: Vec<usize> = (0..examples.len()).collect();
            for j in 0..need {
                let pick = rng.random_range(j..examples.len());
                order.swap(j, pick);
            }
            for &s in &order[..cfg.k_shot] {
                for (m, v) in means[slot].iter_mut().zip(&examples[s]) {
                    *m += v;
                }
            }
            for m in means[slot].iter_mut() {
                *m /= cfg.k_shot as f64;
            }
            for &q in &order[cfg.k_shot..need] {
                queries.push((slot, &examples[q]));
            }
        }

        let mut correct = 0usize;
        for (truth, q) in &queries {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (slot, mean) in means.iter().enumerate() {
                let d: f64 = mean.iter().zip(*q).map(|(m, v)| (m - v) * (m - v)).sum();
                if d < best_d {
                    best_d = d;
                    best = slot;
                }
            }
            if best == *truth {
                correct += 1;
            }
        }
        accs.push(correct as f64 / queries.len() as f64);
    }

    Ok(summarize_accuracies(&accs))
}

/// Mean accuracy and 95% confidence half-width (population std over runs).
pub fn summarize_accuracies(accs: &[f64]) -> FewShotResult {
    let runs = accs.len();
    let mean = accs.iter().sum::<f64>() / runs as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / runs as f64;
    FewShotResult {
        mean_accuracy: mean,
        ci95_half_width: 1.96 * var.sqrt() / (runs as f64).sqrt(),
        runs,
    }
}

/// Penultimate (post global-average-pool) representations for a dataset in
/// the given mode; optionally unit-normalized rows.
pub fn extract_features(
    model: &mut Model,
    data: &LabeledDataset,
    mode: ForwardMode,
    normalize: bool,
) -> Result<Vec<Vec<f32>>> {
    let mean = model
        .tensor("norm.mean")
        .expect("norm.mean")
        .data()
        .to_vec();
    let std = model.tensor("norm.std").expect("norm.std").data().to_vec();
    let shape = (data.c, data.h, data.w);
    let mut rows = Vec::with_capacity(data.n);
    let batch = 256usize;
    let mut i = 0;
    while i < data.n {
        let end = (i + batch).min(data.n);
        let mut images = Vec::new();
        for j in i..end {
            images.extend_from_slice(data.image(j));
        }
        let x = prepare_batch(&images, end - i, shape, &mean, &std);
        let mut graph = Graph::new();
        let out = model.forward(&mut graph, &x, mode, false, false)?;
        let feats = graph.value(out.features);
        let dim = graph.shape(out.features)[1];
        for r in 0..end - i {
            let mut row = feats[r * dim..(r + 1) * dim].to_vec();
            if normalize {
                let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
                if norm > 0.0 {
                    for v in &mut row {
                        *v /= norm;
                    }
                }
            }
            rows.push(row);
        }
        i = end;
    }
    Ok(rows)
}
