//! Gradient checking against central finite differences.
//!
//! Probes are resampled until every ReLU input is at least `kink_tol` away
//! from zero, and any gates recorded on the probe forward are replayed for
//! the difference evaluations, so the comparison is against the frozen-gate
//! surrogate of the function.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::{Result, TensorError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckOpts {
    pub probes: usize,
    pub seed: u64,
    /// Central-difference step.
    pub fd_step: f64,
    /// Minimum |ReLU input| accepted at a probe point.
    pub kink_tol: f64,
    /// How many coordinates of each input tensor are difference-checked per
    /// probe (all of them when the tensor is smaller).
    pub coords_per_tensor: usize,
    pub max_resamples: usize,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        Self {
            probes: 10,
            seed: 0,
            fd_step: 1e-3,
            kink_tol: 1e-3,
            coords_per_tensor: 8,
            max_resamples: 200,
        }
    }
}

/// Compare reverse-mode gradients of `build` against central finite
/// differences, returning the maximum relative error over all probes.
///
/// `build` receives one leaf per entry of `shapes` (all requiring
/// gradients) and must return a scalar loss.
pub fn grad_check<F>(shapes: &[&[usize]], build: F, opts: &GradCheckOpts) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for _ in 0..opts.probes {
        // sample a probe point away from ReLU kinks
        let mut attempt = 0;
        let (tensors, gates, ad_grads) = loop {
            attempt += 1;
            if attempt > opts.max_resamples {
                return Err(TensorError::ProbeExhausted(opts.max_resamples));
            }
            let tensors: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|shape| Tensor::from_fn(shape, |_| standard_normal(&mut rng)).with_grad())
                .collect();
            let mut graph = Graph::new();
            graph.record_gates();
            let vars: Vec<Var> = tensors.iter().map(|t| graph.leaf(t)).collect();
            let loss = build(&mut graph, &vars)?;
            if let Some(min) = graph.min_abs_relu_input() {
                if min <= opts.kink_tol {
                    continue;
                }
            }
            graph.backward(loss)?;
            let ad_grads: Vec<Vec<f64>> = vars
                .iter()
                .map(|&v| graph.grad(v).expect("leaf requires grad").to_vec())
                .collect();
            break (tensors, graph.take_recorded_gates(), ad_grads);
        };

        let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
            let mut graph = Graph::new();
            graph.replay_gates(gates.clone());
            let vars: Vec<Var> = tensors.iter().map(|t| graph.leaf(t)).collect();
            let loss = build(&mut graph, &vars)?;
            Ok(graph.value(loss)[0])
        };

        let mut perturbed = tensors.clone();
        for (ti, tensor) in tensors.iter().enumerate() {
            let numel = tensor.numel();
            let coords: Vec<usize> = if numel <= opts.coords_per_tensor {
                (0..numel).collect()
            } else {
                (0..opts.coords_per_tensor)
                    .map(|_| rng.random_range(0..numel))
                    .collect()
            };
            for &ci in &coords {
                let orig = tensor.data()[ci];
                perturbed[ti].data_mut()[ci] = orig + opts.fd_step;
                let up = eval(&perturbed)?;
                perturbed[ti].data_mut()[ci] = orig - opts.fd_step;
                let down = eval(&perturbed)?;
                perturbed[ti].data_mut()[ci] = orig;
                let fd = (up - down) / (2.0 * opts.fd_step);
                let ad = ad_grads[ti][ci];
                let denom = ad.abs().max(fd.abs()).max(1e-6);
                let rel = (ad - fd).abs() / denom;
                if rel > worst {
                    worst = rel;
                }
            }
        }
    }
    Ok(worst)
}

/// Box-Muller standard normal; keeps the probe stream independent of any
/// external distribution crate.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
