//! Win-proportion statistics: how often each feature map holds its group's
//! positive maximum, per spatial position, over an input set.

use crate::model::{ForwardMode, Model};
use crate::train::{prepare_batch, LabeledDataset};
use crate::Result;

#[derive(Debug, Clone)]
pub struct LayerWinStats {
    pub name: String,
    pub channels: usize,
    pub group_len: usize,
    /// Spatial positions processed (images × H × W).
    pub positions: u64,
    /// Wins per channel.
    pub wins: Vec<u64>,
    /// Positions per group where the whole group was zero.
    pub blanks: Vec<u64>,
}

impl LayerWinStats {
    pub fn groups(&self) -> usize {
        self.channels / self.group_len
    }

    pub fn proportion(&self, channel: usize) -> f64 {
        self.wins[channel] as f64 / self.positions as f64
    }

    pub fn blank_proportion(&self, group: usize) -> f64 {
        self.blanks[group] as f64 / self.positions as f64
    }
}

#[derive(Debug, Clone)]
pub struct WinStats {
    pub layers: Vec<LayerWinStats>,
    pub images: usize,
}

/// Count group winners over a dataset in winner-takes-all mode. A win is a
/// strictly positive group maximum; all-zero groups count as blank. Pass a
/// label to restrict to one class.
pub fn win_statistics(
    model: &mut Model,
    data: &LabeledDataset,
    class_filter: Option<u16>,
    binary: bool,
) -> Result<WinStats> {
    let mode = ForwardMode::Wta { binary };
    let mean = model
        .tensor("norm.mean")
        .expect("norm.mean")
        .data()
        .to_vec();
    let std = model.tensor("norm.std").expect("norm.std").data().to_vec();
    let shape = (data.c, data.h, data.w);
    let indices: Vec<usize> = (0..data.n)
        .filter(|&i| class_filter.is_none_or(|cls| data.labels[i] == cls))
        .collect();

    let mut layers: Vec<LayerWinStats> = Vec::new();
    let batch = 128usize;
    for chunk in indices.chunks(batch) {
        let mut images = Vec::with_capacity(chunk.len() * data.c * data.h * data.w);
        for &i in chunk {
            images.extend_from_slice(data.image(i));
        }
        let x = prepare_batch(&images, chunk.len(), shape, &mean, &std);
        let traces = model.activation_trace(&x, mode)?;
        if layers.is_empty() {
            layers = traces
                .iter()
                .map(|t| LayerWinStats {
                    name: t.name.clone(),
                    channels: t.channels,
                    group_len: t.group_len,
                    positions: 0,
                    wins: vec![0; t.channels],
                    blanks: vec![0; t.channels / t.group_len],
                })
                .collect();
        }
        for (stats, trace) in layers.iter_mut().zip(&traces) {
            let (n, c, inner) = match trace.shape.len() {
                2 => (trace.shape[0], trace.shape[1], 1),
                _ => (
                    trace.shape[0],
                    trace.shape[1],
                    trace.shape[2] * trace.shape[3],
                ),
            };
            stats.positions += (n * inner) as u64;
            let gl = stats.group_len;
            for ni in 0..n {
                for g in 0..c / gl {
                    for p in 0..inner {
                        // at most one strictly positive entry per group in
                        // WTA mode; scan for it
                        let mut winner = None;
                        for j in 0..gl {
                            let v = trace.data[(ni * c + g * gl + j) * inner + p];
                            if v > 0.0 {
                                winner = Some(j);
                                break;
                            }
                        }
                        match winner {
                            Some(j) => stats.wins[g * gl + j] += 1,
                            None => stats.blanks[g] += 1,
                        }
                    }
                }
            }
        }
    }
    Ok(WinStats {
        layers,
        images: indices.len(),
    })
}
