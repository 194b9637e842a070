//! Static multiplication counting over a topology.
//!
//! A layer fed directly by a grouped winner-takes-all activation sees
//! exactly one live channel per group of ℓ_eff, so its multiplication count
//! is the dense count divided by ℓ_eff. Everything else counts dense. With a
//! uniform ℓ the total is A + B/ℓ, where A sums dense-input layers and B the
//! dense counts of gated-input layers.

use crate::model::{InputKind, TopoLayer};
use crate::wta::GroupSpec;
use crate::Result;

#[derive(Debug, Clone)]
pub struct CountRow {
    pub layer: String,
    pub kind: &'static str,
    pub dense_macs: u128,
    /// 1 for dense inputs, ℓ_eff for gated inputs.
    pub sparsity_denom: usize,
    pub effective_macs: u128,
}

#[derive(Debug, Clone)]
pub struct OpCountReport {
    pub rows: Vec<CountRow>,
    /// A: multiplications of layers consuming dense tensors.
    pub dense_input_total: u128,
    /// B: dense multiplications of layers consuming gated tensors.
    pub gated_dense_total: u128,
    pub total_dense: u128,
    pub total_effective: u128,
}

pub fn count_multiplications(topology: &[TopoLayer], spec: &GroupSpec) -> Result<OpCountReport> {
    let mut rows = Vec::with_capacity(topology.len());
    let mut dense_input_total = 0u128;
    let mut gated_dense_total = 0u128;
    let mut total_effective = 0u128;
    for layer in topology {
        let (name, kind, dense, input) = match layer {
            TopoLayer::Conv {
                name,
                in_ch,
                out_ch,
                k,
                out_hw,
                input,
                ..
            } => {
                let macs =
                    (out_hw.0 * out_hw.1) as u128 * *out_ch as u128 * (*in_ch * k * k) as u128;
                (name.clone(), "conv", macs, *input)
            }
            TopoLayer::Dense {
                name,
                in_dim,
                out_dim,
                input,
            } => (
                name.clone(),
                "dense",
                *in_dim as u128 * *out_dim as u128,
                *input,
            ),
        };
        let denom = match input {
            InputKind::Dense => 1usize,
            InputKind::Gated { channels } => spec.group_len(channels)?,
        };
        // one live channel per group: the reduction over input channels
        // shrinks by exactly ℓ_eff, which divides the channel count
        debug_assert_eq!(dense % denom as u128, 0);
        let effective = dense / denom as u128;
        match input {
            InputKind::Dense => dense_input_total += dense,
            InputKind::Gated { .. } => gated_dense_total += dense,
        }
        total_effective += effective;
        rows.push(CountRow {
            layer: name,
            kind,
            dense_macs: dense,
            sparsity_denom: denom,
            effective_macs: effective,
        });
    }
    Ok(OpCountReport {
        rows,
        dense_input_total,
        gated_dense_total,
        total_dense: dense_input_total + gated_dense_total,
        total_effective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{topology_of, ActivationMode, Architecture, ModelConfig, ReplacePolicy};

    fn config(arch: Architecture, group: GroupSpec) -> ModelConfig {
        ModelConfig {
            arch,
            input: (3, 32, 32),
            classes: 10,
            group,
            mode: ActivationMode::Wta { binary: false },
            policy: ReplacePolicy::All,
        }
    }

    #[test]
    fn ell_one_counts_dense() {
        let cfg = config(
            Architecture::ToyCnn {
                widths: vec![64, 128],
                blocks: 1,
            },
            GroupSpec::FixedL(1),
        );
        let topo = topology_of(&cfg).unwrap();
        let report = count_multiplications(&topo, &GroupSpec::FixedL(1)).unwrap();
        assert_eq!(report.total_effective, report.total_dense);
        assert_eq!(
            report.total_dense,
            report.dense_input_total + report.gated_dense_total
        );
    }

    #[test]
    fn law_total_is_a_plus_b_over_ell() {
        for arch in [
            Architecture::ToyCnn {
                widths: vec![64, 128],
                blocks: 2,
            },
            Architecture::ResNet18 { base_width: 64 },
        ] {
            let cfg = config(arch, GroupSpec::FixedL(1));
            let topo = topology_of(&cfg).unwrap();
            let base = count_multiplications(&topo, &GroupSpec::FixedL(1)).unwrap();
            let (a, b) = (base.dense_input_total, base.gated_dense_total);
            assert!(b > 0);
            for ell in [1usize, 2, 4, 8, 16, 32, 64] {
                let r = count_multiplications(&topo, &GroupSpec::FixedL(ell)).unwrap();
                assert_eq!(r.dense_input_total, a);
                assert_eq!(r.gated_dense_total, b);
                assert_eq!(r.total_effective, a + b / ell as u128);
                assert_eq!(b % ell as u128, 0);
            }
        }
    }

    #[test]
    fn fixed_c_uses_per_layer_group_length() {
        let cfg = config(
            Architecture::ToyCnn {
                widths: vec![16, 32],
                blocks: 1,
            },
            GroupSpec::FixedC(4),
        );
        let topo = topology_of(&cfg).unwrap();
        let r = count_multiplications(&topo, &GroupSpec::FixedC(4)).unwrap();
        // conv1_0 consumes the raw input; conv1 of stage 1 consumes the
        // 16-channel gated activation: group length 16/4 = 4
        let gated_row = r
            .rows
            .iter()
            .find(|row| row.layer == "conv1_0")
            .expect("stage-1 conv present");
        assert_eq!(gated_row.sparsity_denom, 4);
        let stem = &r.rows[0];
        assert_eq!(stem.sparsity_denom, 1);
    }

    #[test]
    fn indivisible_width_errors() {
        let cfg = config(
            Architecture::ToyCnn {
                widths: vec![12, 24],
                blocks: 1,
            },
            GroupSpec::FixedL(8),
        );
        let topo = topology_of(&cfg).unwrap();
        assert!(count_multiplications(&topo, &GroupSpec::FixedL(8)).is_err());
    }
}
