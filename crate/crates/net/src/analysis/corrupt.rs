//! Additive noise corruptions at five severities, after the common
//! corruption benchmark: Gaussian, shot (Poisson), and impulse
//! (salt-and-pepper) noise on 8-bit images.

use crate::model::{ForwardMode, Model};
use crate::train::{evaluate, LabeledDataset};
use crate::util::rng_from;
use crate::{NetError, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

/// Severity parameter tables, index 0 = severity 1.
pub const GAUSSIAN_SIGMA: [f64; 5] = [0.08, 0.12, 0.18, 0.26, 0.38];
pub const SHOT_LAMBDA: [f64; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
pub const IMPULSE_FRACTION: [f64; 5] = [0.03, 0.06, 0.09, 0.17, 0.27];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Shot,
    Impulse,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Gaussian, NoiseKind::Shot, NoiseKind::Impulse];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Shot => "shot",
            NoiseKind::Impulse => "impulse",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CorruptionSpec {
    pub kind: NoiseKind,
    /// 0 is the identity; 1..=5 index the severity tables.
    pub severity: usize,
    pub seed: u64,
}

/// Corrupt every image independently; per-image randomness is derived from
/// the seed and the image index, so results do not depend on traversal
/// order.
pub fn corrupt(data: &LabeledDataset, spec: &CorruptionSpec) -> Result<LabeledDataset> {
    if spec.severity > 5 {
        return Err(NetError::InvalidSeverity(spec.severity));
    }
    if spec.severity == 0 {
        return Ok(data.clone());
    }
    let sev = spec.severity - 1;
    let plane = data.c * data.h * data.w;
    let mut images = data.images.clone();
    for i in 0..data.n {
        let mut rng = rng_from(spec.seed, &[0x6e6f697365, i as u64]);
        let img = &mut images[i * plane..(i + 1) * plane];
        match spec.kind {
            NoiseKind::Gaussian => {
                let normal = Normal::new(0.0, GAUSSIAN_SIGMA[sev] * 255.0)
                    .expect("sigma is positive and finite");
                for p in img.iter_mut() {
                    let v = *p as f64 + normal.sample(&mut rng);
                    *p = v.round().clamp(0.0, 255.0) as u8;
                }
            }
            NoiseKind::Shot => {
                let lambda = SHOT_LAMBDA[sev];
                for p in img.iter_mut() {
                    if *p == 0 {
                        continue; // Poisson(0) is identically zero
                    }
                    let rate = *p as f64 / 255.0 * lambda;
                    let pois = Poisson::new(rate).expect("rate is positive");
                    let v: f64 = pois.sample(&mut rng);
                    *p = (v * 255.0 / lambda).round().clamp(0.0, 255.0) as u8;
                }
            }
            NoiseKind::Impulse => {
                let frac = IMPULSE_FRACTION[sev];
                let k = (frac * plane as f64).round() as usize;
                // partial Fisher-Yates picks k distinct pixels
                let mut idx: Vec<usize> = (0..plane).collect();
                for j in 0..k {
                    let pick = rng.random_range(j..plane);
                    idx.swap(j, pick);
                }
                for &pos in &idx[..k] {
                    img[pos] = if rng.random_range(0..2u8) == 1 {
                        255
                    } else {
                        0
                    };
                }
            }
        }
    }
    LabeledDataset::new(
        images,
        data.labels.clone(),
        (data.c, data.h, data.w),
        data.classes,
    )
}

#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub clean: f64,
    /// (kind, mean accuracy over severities 1..=5).
    pub by_kind: Vec<(NoiseKind, f64)>,
}

/// Clean accuracy plus per-kind accuracy averaged over the five severities.
pub fn noise_eval(
    model: &mut Model,
    clean: &LabeledDataset,
    kinds: &[NoiseKind],
    mode: ForwardMode,
    seed: u64,
) -> Result<NoiseReport> {
    let clean_acc = evaluate(model, clean, mode)?;
    let mut by_kind = Vec::with_capacity(kinds.len());
    for (ki, &kind) in kinds.iter().enumerate() {
        let mut total = 0.0;
        for severity in 1..=5usize {
            let corrupted = corrupt(
                clean,
                &CorruptionSpec {
                    kind,
                    severity,
                    seed: crate::util::derive_seed(seed, &[ki as u64, severity as u64]),
                },
            )?;
            total += evaluate(model, &corrupted, mode)?;
        }
        by_kind.push((kind, total / 5.0));
    }
    Ok(NoiseReport {
        clean: clean_acc,
        by_kind,
    })
}
