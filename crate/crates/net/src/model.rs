//! Trainable architectures in three activation modes: plain σ, annealed
//! grouped σ_t, and hard winner-takes-all.

use crate::util::rng_from;
use crate::wta::{sigma_t_graph, sigma_wta_graph, GroupSpec};
use crate::{NetError, Result};
use dham_tensor::{load_checkpoint, save_checkpoint, Graph, Tensor, Var};
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::path::Path;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    /// Plain stack of conv-bn-act stages; stage transitions downsample with
    /// a stride-2 4×4 conv so every conv after the stem consumes an
    /// activation output directly.
    ToyCnn { widths: Vec<usize>, blocks: usize },
    /// Four stages of two basic residual blocks at widths w·{1,2,4,8}.
    /// Stride-2 sites use even kernels (4×4 main path, 2×2 shortcut) so
    /// output sizes divide exactly.
    ResNet18 { base_width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationMode {
    Baseline,
    Anneal { t_init: f64, t_final: f64 },
    Wta { binary: bool },
}

/// Which activation sites get the grouped operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplacePolicy {
    /// Every site, including post-residual-addition ones.
    #[default]
    All,
    /// Only sites inside block main paths; post-addition sites stay plain.
    PreAddOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Input (channels, height, width).
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub group: GroupSpec,
    pub mode: ActivationMode,
    pub policy: ReplacePolicy,
}

/// Mode a single forward pass runs in, with the anneal temperature already
/// resolved from the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    Baseline,
    Anneal { t: f64 },
    Wta { binary: bool },
}

impl ForwardMode {
    pub fn grouped(&self) -> bool {
        !matches!(self, ForwardMode::Baseline)
    }
}

#[derive(Debug, Clone)]
enum Piece {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Bn {
        name: String,
        ch: usize,
    },
    Act {
        name: String,
        channels: usize,
        grouped: bool,
    },
    Residual {
        main: Vec<Piece>,
        shortcut: Vec<Piece>,
    },
    GlobalPool,
    Dense {
        name: String,
        in_dim: usize,
        out_dim: usize,
    },
}

#[derive(Debug, Clone)]
struct NamedTensor {
    name: String,
    tensor: Tensor<f32>,
    trainable: bool,
}

/// What feeds a counted layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Raw network input or any non-gated tensor.
    Dense,
    /// Output of a grouped winner-takes-all activation over this many channels.
    Gated { channels: usize },
}

/// Static description of one multiplication-bearing layer.
#[derive(Debug, Clone)]
pub enum TopoLayer {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
        input: InputKind,
    },
    Dense {
        name: String,
        in_dim: usize,
        out_dim: usize,
        input: InputKind,
    },
}

/// Post-activation tensor captured during a traced forward pass.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub name: String,
    pub channels: usize,
    pub group_len: usize,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub struct ForwardOut {
    pub logits: Var,
    /// Penultimate representation (post global-average-pool).
    pub features: Var,
    pub traces: Vec<TraceEntry>,
    /// Leaf vars of the trainable parameters, in declaration order.
    pub param_vars: Vec<Var>,
}

/// Named parameters plus the piece list that wires them together.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pieces: Vec<Piece>,
    tensors: Vec<NamedTensor>,
    index: BTreeMap<String, usize>,
}

fn plan(config: &ModelConfig) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let act = |name: String, channels: usize, post_add: bool, policy: ReplacePolicy| Piece::Act {
        name,
        channels,
        grouped: policy == ReplacePolicy::All || !post_add,
    };
    match &config.arch {
        Architecture::ToyCnn { widths, blocks } => {
            if widths.is_empty() || *blocks == 0 {
                return Err(NetError::BadConfig(
                    "toy cnn needs at least one width and one block per stage".into(),
                ));
            }
            let mut in_ch = config.input.0;
            for (s, &w) in widths.iter().enumerate() {
                for b in 0..*blocks {
                    let (k, stride, pad) = if s > 0 && b == 0 {
                        (4, 2, 1)
                    } else {
                        (3, 1, 1)
                    };
                    pieces.push(Piece::Conv {
                        name: format!("conv{s}_{b}"),
                        in_ch,
                        out_ch: w,
                        k,
                        stride,
                        pad,
                    });
                    pieces.push(Piece::Bn {
                        name: format!("bn{s}_{b}"),
                        ch: w,
                    });
                    pieces.push(act(format!("act{s}_{b}"), w, false, config.policy));
                    in_ch = w;
                }
            }
            pieces.push(Piece::GlobalPool);
            pieces.push(Piece::Dense {
                name: "fc".into(),
                in_dim: in_ch,
                out_dim: config.classes,
            });
        }
        Architecture::ResNet18 { base_width } => {
            if *base_width == 0 {
                return Err(NetError::BadConfig("base_width must be positive".into()));
            }
            let w = *base_width;
            pieces.push(Piece::Conv {
                name: "conv1".into(),
                in_ch: config.input.0,
                out_ch: w,
                k: 3,
                stride: 1,
                pad: 1,
            });
            pieces.push(Piece::Bn {
                name: "bn1".into(),
                ch: w,
            });
            pieces.push(act("act1".into(), w, false, config.policy));
            let mut in_ch = w;
            for stage in 0..4usize {
                let out_ch = w << stage;
                for block in 0..2usize {
                    let downsample = stage > 0 && block == 0;
                    let prefix = format!("layer{}.{}", stage + 1, block);
                    let (k1, s1, p1) = if downsample { (4, 2, 1) } else { (3, 1, 1) };
                    let main = vec![
                        Piece::Conv {
                            name: format!("{prefix}.conv1"),
                            in_ch,
                            out_ch,
                            k: k1,
                            stride: s1,
                            pad: p1,
                        },
                        Piece::Bn {
                            name: format!("{prefix}.bn1"),
                            ch: out_ch,
                        },
                        act(format!("{prefix}.act1"), out_ch, false, config.policy),
                        Piece::Conv {
                            name: format!("{prefix}.conv2"),
                            in_ch: out_ch,
                            out_ch,
                            k: 3,
                            stride: 1,
                            pad: 1,
                        },
                        Piece::Bn {
                            name: format!("{prefix}.bn2"),
                            ch: out_ch,
                        },
                    ];
                    let shortcut = if downsample || in_ch != out_ch {
                        vec![
                            Piece::Conv {
                                name: format!("{prefix}.down.conv"),
                                in_ch,
                                out_ch,
                                k: if downsample { 2 } else { 1 },
                                stride: if downsample { 2 } else { 1 },
                                pad: 0,
                            },
                            Piece::Bn {
                                name: format!("{prefix}.down.bn"),
                                ch: out_ch,
                            },
                        ]
                    } else {
                        Vec::new()
                    };
                    pieces.push(Piece::Residual { main, shortcut });
                    pieces.push(act(format!("{prefix}.act2"), out_ch, true, config.policy));
                    in_ch = out_ch;
                }
            }
            pieces.push(Piece::GlobalPool);
            pieces.push(Piece::Dense {
                name: "fc".into(),
                in_dim: in_ch,
                out_dim: config.classes,
            });
        }
    }
    Ok(pieces)
}

fn validate_grouping(pieces: &[Piece], config: &ModelConfig) -> Result<()> {
    if matches!(config.mode, ActivationMode::Baseline) {
        return Ok(());
    }
    fn walk(pieces: &[Piece], spec: &GroupSpec) -> Result<()> {
        for p in pieces {
            match p {
                Piece::Act {
                    channels, grouped, ..
                } if *grouped => {
                    spec.group_len(*channels)?;
                }
                Piece::Residual { main, shortcut } => {
                    walk(main, spec)?;
                    walk(shortcut, spec)?;
                }
                _ => {}
            }
        }
        Ok(())
    }
    walk(pieces, &config.group)
}

impl Model {
    /// Deterministic He-style initialization from the seed.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.classes < 2 {
            return Err(NetError::BadConfig("need at least two classes".into()));
        }
        let pieces = plan(&config)?;
        validate_grouping(&pieces, &config)?;
        let mut rng = rng_from(seed, &[0x6d6f64656c]);
        let mut tensors = Vec::new();

        fn init_pieces(
            pieces: &[Piece],
            tensors: &mut Vec<NamedTensor>,
            rng: &mut rand_chacha::ChaCha8Rng,
        ) {
            let he = |fan_in: usize, shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng| {
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("std is finite");
                Tensor::from_fn(shape, |_| normal.sample(rng) as f32)
            };
            for p in pieces {
                match p {
                    Piece::Conv {
                        name,
                        in_ch,
                        out_ch,
                        k,
                        ..
                    } => {
                        let w = he(in_ch * k * k, &[*out_ch, *in_ch, *k, *k], rng);
                        tensors.push(NamedTensor {
                            name: format!("{name}.weight"),
                            tensor: w,
                            trainable: true,
                        });
                    }
                    Piece::Bn { name, ch } => {
                        for (suffix, value, trainable) in [
                            ("gamma", 1.0f32, true),
                            ("beta", 0.0, true),
                            ("running_mean", 0.0, false),
                            ("running_var", 1.0, false),
                        ] {
                            tensors.push(NamedTensor {
                                name: format!("{name}.{suffix}"),
                                tensor: Tensor::full(&[*ch], value),
                                trainable,
                            });
                        }
                    }
                    Piece::Act { .. } | Piece::GlobalPool => {}
                    Piece::Residual { main, shortcut } => {
                        init_pieces(main, tensors, rng);
                        init_pieces(shortcut, tensors, rng);
                    }
                    Piece::Dense {
                        name,
                        in_dim,
                        out_dim,
                    } => {
                        let w = he(*in_dim, &[*in_dim, *out_dim], rng);
                        tensors.push(NamedTensor {
                            name: format!("{name}.weight"),
                            tensor: w,
                            trainable: true,
                        });
                        tensors.push(NamedTensor {
                            name: format!("{name}.bias"),
                            tensor: Tensor::zeros(&[*out_dim]),
                            trainable: true,
                        });
                    }
                }
            }
        }
        init_pieces(&pieces, &mut tensors, &mut rng);

        // input normalization constants, filled in by the trainer
        tensors.push(NamedTensor {
            name: "norm.mean".into(),
            tensor: Tensor::zeros(&[config.input.0]),
            trainable: false,
        });
        tensors.push(NamedTensor {
            name: "norm.std".into(),
            tensor: Tensor::full(&[config.input.0], 1.0),
            trainable: false,
        });

        for t in &mut tensors {
            t.tensor.requires_grad = t.trainable;
        }

        let index = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        Ok(Self {
            config,
            pieces,
            tensors,
            index,
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index.get(name).map(|&i| &self.tensors[i].tensor)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        let i = *self.index.get(name)?;
        Some(&mut self.tensors[i].tensor)
    }

    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &Tensor<f32>, bool)> {
        self.tensors
            .iter()
            .map(|t| (t.name.as_str(), &t.tensor, t.trainable))
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.name.clone())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.tensor.numel())
            .sum()
    }

    /// Apply an update to every trainable tensor in declaration order.
    pub fn update_trainable(&mut self, mut f: impl FnMut(usize, &str, &mut Tensor<f32>)) {
        let mut slot = 0;
        for t in &mut self.tensors {
            if t.trainable {
                f(slot, &t.name, &mut t.tensor);
                slot += 1;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, &Tensor<f32>)> = self
            .tensors
            .iter()
            .map(|t| (t.name.clone(), &t.tensor))
            .collect();
        save_checkpoint(path, &entries)?;
        Ok(())
    }

    /// Load a checkpoint into matching tensor names; every model tensor must
    /// be present with the right shape.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let loaded = load_checkpoint(path)?;
        let by_name: BTreeMap<String, Tensor<f32>> = loaded.into_iter().collect();
        for t in &mut self.tensors {
            let Some(src) = by_name.get(&t.name) else {
                return Err(NetError::MissingTensor(t.name.clone()));
            };
            if src.shape() != t.tensor.shape() {
                return Err(NetError::CheckpointShape(t.name.clone()));
            }
            t.tensor = src.clone();
        }
        Ok(())
    }

    /// Resolve the forward mode the model's configured activation implies,
    /// given an explicit anneal temperature.
    pub fn configured_mode(&self, anneal_t: f64) -> ForwardMode {
        match self.config.mode {
            ActivationMode::Baseline => ForwardMode::Baseline,
            ActivationMode::Anneal { .. } => ForwardMode::Anneal { t: anneal_t },
            ActivationMode::Wta { binary } => ForwardMode::Wta { binary },
        }
    }

    /// Run the network. In training mode batchnorm uses batch statistics and
    /// updates running ones; `trace` collects grouped post-activation
    /// tensors.
    pub fn forward(
        &mut self,
        graph: &mut Graph<f32>,
        batch: &Tensor<f32>,
        mode: ForwardMode,
        train: bool,
        trace: bool,
    ) -> Result<ForwardOut> {
        let (c, h, w) = self.config.input;
        if batch.shape().len() != 4
            || batch.shape()[1] != c
            || batch.shape()[2] != h
            || batch.shape()[3] != w
        {
            return Err(NetError::ShapeMismatch(format!(
                "batch shape {:?} does not match input ({c},{h},{w})",
                batch.shape()
            )));
        }
        let x = graph.leaf(batch);
        let mut traces = Vec::new();
        let mut param_vars = Vec::new();
        let pieces = self.pieces.clone();
        let cur = self.forward_pieces(
            &pieces,
            graph,
            x,
            mode,
            train,
            trace,
            &mut traces,
            &mut param_vars,
        )?;
        let ForwardState { pooled, logits } = cur;
        let features = pooled.ok_or_else(|| {
            NetError::BadConfig("architecture has no global pooling stage".into())
        })?;
        Ok(ForwardOut {
            logits,
            features,
            traces,
            param_vars,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_pieces(
        &mut self,
        pieces: &[Piece],
        graph: &mut Graph<f32>,
        input: Var,
        mode: ForwardMode,
        train: bool,
        trace: bool,
        traces: &mut Vec<TraceEntry>,
        param_vars: &mut Vec<Var>,
    ) -> Result<ForwardState> {
        let mut cur = input;
        let mut pooled = None;
        for piece in pieces {
            match piece {
                Piece::Conv {
                    name, stride, pad, ..
                } => {
                    let w = self
                        .tensor(&format!("{name}.weight"))
                        .expect("conv weight exists")
                        .clone();
                    let wv = graph.leaf(&w);
                    param_vars.push(wv);
                    cur = graph.conv2d(cur, wv, *stride, *pad)?;
                }
                Piece::Bn { name, ch } => {
                    cur = self.forward_bn(graph, cur, name, *ch, train, param_vars)?;
                }
                Piece::Act {
                    name,
                    channels,
                    grouped,
                } => {
                    let site_grouped = *grouped && mode.grouped();
                    cur = match (site_grouped, mode) {
                        (false, _) | (true, ForwardMode::Baseline) => graph.relu(cur),
                        (true, ForwardMode::Anneal { t }) => {
                            sigma_t_graph(graph, cur, &self.config.group, t)?
                        }
                        (true, ForwardMode::Wta { binary }) => {
                            sigma_wta_graph(graph, cur, &self.config.group, binary)?
                        }
                    };
                    if trace && site_grouped {
                        traces.push(TraceEntry {
                            name: name.clone(),
                            channels: *channels,
                            group_len: self.config.group.group_len(*channels)?,
                            shape: graph.shape(cur).to_vec(),
                            data: graph.value(cur).to_vec(),
                        });
                    }
                }
                Piece::Residual { main, shortcut } => {
                    let entry = cur;
                    let main_out = self.forward_pieces(
                        main, graph, entry, mode, train, trace, traces, param_vars,
                    )?;
                    let main_var = main_out.logits;
                    let short_var = if shortcut.is_empty() {
                        entry
                    } else {
                        self.forward_pieces(
                            shortcut, graph, entry, mode, train, trace, traces, param_vars,
                        )?
                        .logits
                    };
                    cur = graph.add(main_var, short_var)?;
                }
                Piece::GlobalPool => {
                    cur = graph.global_avg_pool(cur)?;
                    pooled = Some(cur);
                }
                Piece::Dense { name, .. } => {
                    let w = self
                        .tensor(&format!("{name}.weight"))
                        .expect("dense weight exists")
                        .clone();
                    let b = self
                        .tensor(&format!("{name}.bias"))
                        .expect("dense bias exists")
                        .clone();
                    let wv = graph.leaf(&w);
                    let bv = graph.leaf(&b);
                    param_vars.push(wv);
                    param_vars.push(bv);
                    cur = graph.matmul(cur, wv)?;
                    cur = graph.add_bias_row(cur, bv)?;
                }
            }
        }
        Ok(ForwardState {
            pooled,
            logits: cur,
        })
    }

    fn forward_bn(
        &mut self,
        graph: &mut Graph<f32>,
        x: Var,
        name: &str,
        ch: usize,
        train: bool,
        param_vars: &mut Vec<Var>,
    ) -> Result<Var> {
        let gamma = self
            .tensor(&format!("{name}.gamma"))
            .expect("bn gamma exists")
            .clone();
        let beta = self
            .tensor(&format!("{name}.beta"))
            .expect("bn beta exists")
            .clone();
        let gv = graph.leaf(&gamma);
        let bv = graph.leaf(&beta);
        param_vars.push(gv);
        param_vars.push(bv);
        if train {
            let shape = graph.shape(x);
            let m = (shape[0] * shape[2] * shape[3]) as f64;
            let (out, mean, var) = graph.batchnorm_train(x, gv, bv, BN_EPS as f32)?;
            // running stats use the unbiased variance, as is conventional
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 } as f32;
            let rm = self
                .tensor_mut(&format!("{name}.running_mean"))
                .expect("bn running mean exists");
            for (r, &b) in rm.data_mut().iter_mut().zip(&mean) {
                *r = BN_MOMENTUM as f32 * *r + (1.0 - BN_MOMENTUM as f32) * b;
            }
            let rv = self
                .tensor_mut(&format!("{name}.running_var"))
                .expect("bn running var exists");
            for (r, &b) in rv.data_mut().iter_mut().zip(&var) {
                *r = BN_MOMENTUM as f32 * *r + (1.0 - BN_MOMENTUM as f32) * (b * unbias);
            }
            debug_assert_eq!(ch, mean.len());
            Ok(out)
        } else {
            let rm = self
                .tensor(&format!("{name}.running_mean"))
                .expect("bn running mean exists")
                .data()
                .to_vec();
            let rv = self
                .tensor(&format!("{name}.running_var"))
                .expect("bn running var exists")
                .data()
                .to_vec();
            Ok(graph.batchnorm_eval(x, gv, bv, &rm, &rv, BN_EPS as f32)?)
        }
    }

    /// Per-layer post-activation tensors in a grouped mode (eval statistics).
    pub fn activation_trace(
        &mut self,
        batch: &Tensor<f32>,
        mode: ForwardMode,
    ) -> Result<Vec<TraceEntry>> {
        if !mode.grouped() {
            return Err(NetError::TraceNeedsGroupedMode);
        }
        let mut graph = Graph::new();
        let out = self.forward(&mut graph, batch, mode, false, true)?;
        Ok(out.traces)
    }

    /// Static layer listing with input gating resolved, for cost counting.
    pub fn topology(&self) -> Result<Vec<TopoLayer>> {
        topology_of(&self.config)
    }
}

struct ForwardState {
    pooled: Option<Var>,
    logits: Var,
}

/// Build the static multiplication-bearing layer list for a configuration
/// without materializing parameters.
pub fn topology_of(config: &ModelConfig) -> Result<Vec<TopoLayer>> {
    let pieces = plan(config)?;
    let mut layers = Vec::new();
    let (c, h, w) = config.input;
    let state = walk_topology(
        &pieces,
        TopoState {
            channels: c,
            h,
            w,
            src: InputKind::Dense,
        },
        &mut layers,
    )?;
    let _ = state;
    Ok(layers)
}

#[derive(Clone, Copy)]
struct TopoState {
    channels: usize,
    h: usize,
    w: usize,
    src: InputKind,
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = size + 2 * pad;
    if span < k || !(span - k).is_multiple_of(stride) {
        return Err(NetError::BadConfig(format!(
            "conv geometry does not divide: size {size}, kernel {k}, stride {stride}, pad {pad}"
        )));
    }
    Ok((span - k) / stride + 1)
}

fn walk_topology(
    pieces: &[Piece],
    mut state: TopoState,
    layers: &mut Vec<TopoLayer>,
) -> Result<TopoState> {
    for piece in pieces {
        match piece {
            Piece::Conv {
                name,
                in_ch,
                out_ch,
                k,
                stride,
                pad,
            } => {
                let oh = conv_out(state.h, *k, *stride, *pad)?;
                let ow = conv_out(state.w, *k, *stride, *pad)?;
                debug_assert_eq!(*in_ch, state.channels);
                layers.push(TopoLayer::Conv {
                    name: name.clone(),
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    k: *k,
                    stride: *stride,
                    pad: *pad,
                    out_hw: (oh, ow),
                    input: state.src,
                });
                state = TopoState {
                    channels: *out_ch,
                    h: oh,
                    w: ow,
                    src: InputKind::Dense,
                };
            }
            Piece::Bn { .. } => {}
            Piece::Act {
                channels, grouped, ..
            } => {
                state.src = if *grouped {
                    InputKind::Gated {
                        channels: *channels,
                    }
                } else {
                    InputKind::Dense
                };
            }
            Piece::Residual { main, shortcut } => {
                let entry = state;
                let main_out = walk_topology(main, entry, layers)?;
                if !shortcut.is_empty() {
                    walk_topology(shortcut, entry, layers)?;
                }
                state = TopoState {
                    channels: main_out.channels,
                    h: main_out.h,
                    w: main_out.w,
                    src: InputKind::Dense, // the addition result is dense
                };
            }
            Piece::GlobalPool => {
                state = TopoState {
                    channels: state.channels,
                    h: 1,
                    w: 1,
                    src: InputKind::Dense, // averaging destroys one-hot sparsity
                };
            }
            Piece::Dense {
                name,
                in_dim,
                out_dim,
            } => {
                layers.push(TopoLayer::Dense {
                    name: name.clone(),
                    in_dim: *in_dim,
                    out_dim: *out_dim,
                    input: state.src,
                });
                state.src = InputKind::Dense;
                state.channels = *out_dim;
            }
        }
    }
    Ok(state)
}
