//! Grouped activations: the annealed softmax-gated activation, its hard
//! winner-takes-all limit, channel grouping schemes, and the temperature
//! schedule.
//!
//! For a group z of ℓ channels the annealed activation is
//! `softmax(t·σ(z)) / max(softmax(t·σ(z))) ⊙ σ(z)`. The normalizers cancel,
//! so the gate reduces to `exp(t·(σ(z) − max σ(z)))`: the winning channel is
//! gated by exactly 1 and every other channel by a factor in (0, 1]. At t→0
//! the gate is uniformly 1 and the base activation is recovered; at t→∞ the
//! gate becomes a hard winner-takes-all. The gate is treated as a constant
//! in the backward pass.

use crate::{NetError, Result};
use dham_tensor::{Element, Graph, Tensor, Var};
use num_bigint::BigUint;

/// Channel grouping: either groups of a fixed size ℓ (their count varies
/// with layer width) or a fixed count c of groups (their size varies).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSpec {
    FixedL(usize),
    FixedC(usize),
}

impl GroupSpec {
    /// Effective group length ℓ for a layer of the given width.
    pub fn group_len(&self, channels: usize) -> Result<usize> {
        match *self {
            GroupSpec::FixedL(l) => {
                if l == 0 || !channels.is_multiple_of(l) {
                    Err(NetError::Divisibility {
                        channels,
                        group: format!("ℓ={l}"),
                    })
                } else {
                    Ok(l)
                }
            }
            GroupSpec::FixedC(c) => {
                if c == 0 || !channels.is_multiple_of(c) {
                    Err(NetError::Divisibility {
                        channels,
                        group: format!("c={c}"),
                    })
                } else {
                    Ok(channels / c)
                }
            }
        }
    }

    /// Number of groups for a layer of the given width.
    pub fn group_count(&self, channels: usize) -> Result<usize> {
        Ok(channels / self.group_len(channels)?)
    }
}

/// Geometric interpolation from `t_init` to `t_final` over `total_steps`
/// optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub t_init: f64,
    pub t_final: f64,
    pub total_steps: usize,
}

impl TemperatureSchedule {
    pub fn new(t_init: f64, t_final: f64, total_steps: usize) -> Result<Self> {
        if t_init.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
            || t_final.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return Err(NetError::BadSchedule(format!(
                "temperatures must be positive, got {t_init} and {t_final}"
            )));
        }
        if total_steps == 0 {
            return Err(NetError::BadSchedule("total_steps must be >= 1".into()));
        }
        Ok(Self {
            t_init,
            t_final,
            total_steps,
        })
    }
}

/// t(step) = t_init · (t_final/t_init)^(step/total_steps).
pub fn temperature_at(sched: &TemperatureSchedule, step: usize) -> Result<f64> {
    if step > sched.total_steps {
        return Err(NetError::StepOutOfRange {
            step,
            total: sched.total_steps,
        });
    }
    let frac = step as f64 / sched.total_steps as f64;
    Ok(sched.t_init * (sched.t_final / sched.t_init).powf(frac))
}

/// Base activation the gate is wrapped around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaseAct {
    #[default]
    Relu,
    Identity,
}

impl BaseAct {
    fn apply<T: Element>(&self, v: T) -> T {
        match self {
            BaseAct::Relu => {
                if v > T::ZERO {
                    v
                } else {
                    T::ZERO
                }
            }
            BaseAct::Identity => v,
        }
    }
}

/// (outer, channels, inner) decomposition of a tensor whose axis 1 is the
/// channel axis: rank 2 is (N, C), rank 4 is (N, C, H·W).
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(NetError::ShapeMismatch(format!(
            "grouped activation expects rank 2 or 4, got {shape:?}"
        ))),
    }
}

/// Annealing gate for already-activated values: exp(t·(s − max_group s)).
pub fn anneal_gate<T: Element>(
    s: &[T],
    (outer, channels, inner): (usize, usize, usize),
    group_len: usize,
    t: f64,
) -> Vec<T> {
    let t = T::from_f64(t);
    let mut gate = vec![T::ZERO; s.len()];
    for n in 0..outer {
        for g in 0..channels / group_len {
            for p in 0..inner {
                let idx = |j: usize| (n * channels + g * group_len + j) * inner + p;
                let mut m = s[idx(0)];
                for j in 1..group_len {
                    m = m.maximum(s[idx(j)]);
                }
                for j in 0..group_len {
                    let i = idx(j);
                    gate[i] = (t * (s[i] - m)).exp();
                }
            }
        }
    }
    gate
}

/// Hard winner-takes-all gate: 1 at the lowest-index maximum of each group,
/// 0 elsewhere.
pub fn wta_gate<T: Element>(
    s: &[T],
    (outer, channels, inner): (usize, usize, usize),
    group_len: usize,
) -> Vec<T> {
    let mut gate = vec![T::ZERO; s.len()];
    for n in 0..outer {
        for g in 0..channels / group_len {
            for p in 0..inner {
                let idx = |j: usize| (n * channels + g * group_len + j) * inner + p;
                let mut win = 0usize;
                for j in 1..group_len {
                    if s[idx(j)] > s[idx(win)] {
                        win = j;
                    }
                }
                gate[idx(win)] = T::ONE;
            }
        }
    }
    gate
}

/// Binary winner indicator: 1 at the winner only when the group maximum is
/// strictly positive, so all-zero groups stay all-zero.
pub fn wta_indicator<T: Element>(
    s: &[T],
    (outer, channels, inner): (usize, usize, usize),
    group_len: usize,
) -> Vec<T> {
    let mut out = vec![T::ZERO; s.len()];
    for n in 0..outer {
        for g in 0..channels / group_len {
            for p in 0..inner {
                let idx = |j: usize| (n * channels + g * group_len + j) * inner + p;
                let mut win = 0usize;
                for j in 1..group_len {
                    if s[idx(j)] > s[idx(win)] {
                        win = j;
                    }
                }
                if s[idx(win)] > T::ZERO {
                    out[idx(win)] = T::ONE;
                }
            }
        }
    }
    out
}

/// Annealed activation on a plain tensor.
pub fn sigma_t<T: Element>(
    x: &Tensor<T>,
    spec: &GroupSpec,
    t: f64,
    base: BaseAct,
) -> Result<Tensor<T>> {
    if t.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(NetError::BadSchedule(format!(
            "temperature {t} must be positive"
        )));
    }
    let layout = channel_layout(x.shape())?;
    let group_len = spec.group_len(layout.1)?;
    let s: Vec<T> = x.data().iter().map(|&v| base.apply(v)).collect();
    let gate = anneal_gate(&s, layout, group_len, t);
    let data = s.iter().zip(&gate).map(|(&a, &g)| a * g).collect();
    Ok(Tensor::new(x.shape().to_vec(), data).expect("same shape"))
}

/// Hard winner-takes-all activation on a plain tensor. Value-keeping by
/// default; `binary` emits the 0/1 winner indicator instead.
pub fn sigma_wta<T: Element>(
    x: &Tensor<T>,
    spec: &GroupSpec,
    base: BaseAct,
    binary: bool,
) -> Result<Tensor<T>> {
    let layout = channel_layout(x.shape())?;
    let group_len = spec.group_len(layout.1)?;
    let s: Vec<T> = x.data().iter().map(|&v| base.apply(v)).collect();
    let data = if binary {
        wta_indicator(&s, layout, group_len)
    } else {
        let gate = wta_gate(&s, layout, group_len);
        s.iter().zip(&gate).map(|(&a, &g)| a * g).collect()
    };
    Ok(Tensor::new(x.shape().to_vec(), data).expect("same shape"))
}

/// Annealed activation as a graph op: relu on-tape, gate off-tape
/// (straight-through: the gate is a constant in backward).
pub fn sigma_t_graph<T: Element>(
    graph: &mut Graph<T>,
    x: Var,
    spec: &GroupSpec,
    t: f64,
) -> Result<Var> {
    let layout = channel_layout(graph.shape(x))?;
    let group_len = spec.group_len(layout.1)?;
    let s = graph.relu(x);
    Ok(graph.mul_gated(s, |sv| anneal_gate(sv, layout, group_len, t))?)
}

/// Hard winner-takes-all as a graph op. The value-keeping form keeps a
/// frozen-gate gradient; the binary form is inference-only.
pub fn sigma_wta_graph<T: Element>(
    graph: &mut Graph<T>,
    x: Var,
    spec: &GroupSpec,
    binary: bool,
) -> Result<Var> {
    let layout = channel_layout(graph.shape(x))?;
    let group_len = spec.group_len(layout.1)?;
    let s = graph.relu(x);
    if binary {
        let ind = wta_indicator(graph.value(s), layout, group_len);
        Ok(graph.detached(s, ind)?)
    } else {
        Ok(graph.mul_gated(s, |sv| wta_gate(sv, layout, group_len))?)
    }
}

/// Number of distinct winner combinations a layer can encode: ℓ^c, exact.
pub fn combination_count(spec: &GroupSpec, channels: usize) -> Result<BigUint> {
    let l = spec.group_len(channels)?;
    let c = channels / l;
    Ok(BigUint::from(l).pow(c as u32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_len_fixed_l_and_c() {
        assert_eq!(GroupSpec::FixedL(2).group_len(64).unwrap(), 2);
        assert_eq!(GroupSpec::FixedC(4).group_len(64).unwrap(), 16);
        assert!(GroupSpec::FixedL(3).group_len(64).is_err());
        assert!(GroupSpec::FixedC(5).group_len(64).is_err());
        assert!(GroupSpec::FixedL(0).group_len(64).is_err());
    }

    #[test]
    fn temperature_endpoints_and_midpoint() {
        let s = TemperatureSchedule::new(10.0, 1000.0, 100).unwrap();
        assert_eq!(temperature_at(&s, 0).unwrap(), 10.0);
        assert!((temperature_at(&s, 100).unwrap() - 1000.0).abs() < 1e-9);
        assert!((temperature_at(&s, 50).unwrap() - 100.0).abs() < 1e-9);
        assert!(temperature_at(&s, 101).is_err());
        assert!(TemperatureSchedule::new(0.0, 10.0, 5).is_err());
        assert!(TemperatureSchedule::new(1.0, 10.0, 0).is_err());
    }

    #[test]
    fn sigma_t_two_channel_example() {
        // group [2, 1] at t=1: winner keeps its value, loser is gated by e^-1
        let x = Tensor::new(vec![1, 2], vec![2.0f64, 1.0]).unwrap();
        let y = sigma_t(&x, &GroupSpec::FixedL(2), 1.0, BaseAct::Relu).unwrap();
        assert!((y.data()[0] - 2.0).abs() < 1e-12);
        assert!((y.data()[1] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn sigma_t_high_temperature_is_wta() {
        let x = Tensor::new(vec![1, 2], vec![2.0f64, 1.0]).unwrap();
        let y = sigma_t(&x, &GroupSpec::FixedL(2), 100.0, BaseAct::Relu).unwrap();
        assert!((y.data()[0] - 2.0).abs() < 1e-9);
        assert!(y.data()[1].abs() < 1e-6);
    }

    #[test]
    fn sigma_wta_examples() {
        let x = Tensor::new(vec![1, 3], vec![0.5f64, 3.2, 1.1]).unwrap();
        let y = sigma_wta(&x, &GroupSpec::FixedL(3), BaseAct::Relu, false).unwrap();
        assert_eq!(y.data(), &[0.0, 3.2, 0.0]);

        // all-negative group is all zero after relu
        let x = Tensor::new(vec![1, 2], vec![-1.0f64, -3.0]).unwrap();
        let y = sigma_wta(&x, &GroupSpec::FixedL(2), BaseAct::Relu, false).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let yb = sigma_wta(&x, &GroupSpec::FixedL(2), BaseAct::Relu, true).unwrap();
        assert_eq!(yb.data(), &[0.0, 0.0]);

        // ties keep the lowest index
        let x = Tensor::new(vec![1, 2], vec![2.0f64, 2.0]).unwrap();
        let y = sigma_wta(&x, &GroupSpec::FixedL(2), BaseAct::Relu, false).unwrap();
        assert_eq!(y.data(), &[2.0, 0.0]);
    }

    #[test]
    fn combination_counts() {
        assert_eq!(
            combination_count(&GroupSpec::FixedL(2), 64).unwrap(),
            BigUint::from(4294967296u64)
        );
        assert_eq!(
            combination_count(&GroupSpec::FixedL(1), 64).unwrap(),
            BigUint::from(1u32)
        );
        assert_eq!(
            combination_count(&GroupSpec::FixedL(64), 64).unwrap(),
            BigUint::from(64u32)
        );
        // big exponents stay exact
        let big = combination_count(&GroupSpec::FixedL(2), 512).unwrap();
        assert_eq!(big, BigUint::from(2u32).pow(256));
    }
}
