use crate::element::Element;
use crate::error::TensorError;
use crate::kernels::{self, ConvDims};
use crate::tensor::Tensor;
use crate::Result;
use rayon::prelude::*;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    Relu {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    Sum {
        x: usize,
    },
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    AddBiasRow {
        x: usize,
        bias: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        dims: ConvDims,
    },
    GlobalAvgPool {
        x: usize,
    },
    /// Training-mode batchnorm; per-channel batch statistics are saved for backward.
    BatchNormTrain {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    /// Inference-mode batchnorm with fixed statistics.
    BatchNormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    SoftmaxSeg {
        x: usize,
        seg: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    /// Multiply by a factor treated as a constant in backward.
    MulGated {
        x: usize,
        gate: Vec<T>,
    },
    /// Value computed off-tape; gradients do not flow (inference-only).
    Detached,
}

#[derive(Debug)]
struct Node<T: Element> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in forward order, which makes the
/// tape topologically ordered by construction; `backward` walks it in
/// reverse. A graph is single-use: rebuild the forward pass for every step.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
    recording_gates: bool,
    recorded_gates: Vec<Vec<T>>,
    replay_gates: Option<Vec<Vec<T>>>,
    replay_pos: usize,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            recording_gates: false,
            recorded_gates: Vec::new(),
            replay_gates: None,
            replay_pos: 0,
        }
    }

    /// Record every gate produced by `mul_gated` so a later run can replay
    /// them (frozen-gate surrogate evaluation).
    pub fn record_gates(&mut self) {
        self.recording_gates = true;
    }

    pub fn recorded_gates(&self) -> &[Vec<T>] {
        &self.recorded_gates
    }

    pub fn take_recorded_gates(&mut self) -> Vec<Vec<T>> {
        std::mem::take(&mut self.recorded_gates)
    }

    /// Make `mul_gated` consume the given gates in call order instead of
    /// computing fresh ones.
    pub fn replay_gates(&mut self, gates: Vec<Vec<T>>) {
        self.replay_gates = Some(gates);
        self.replay_pos = 0;
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is valid")
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if it was computed.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Smallest |input| over all ReLU nodes, used to keep gradient-check
    /// probes away from kinks. `None` when the graph has no ReLU.
    pub fn min_abs_relu_input(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for node in &self.nodes {
            if let Op::Relu { x } = node.op {
                for v in &self.nodes[x].value {
                    let a = v.to_f64().abs();
                    if best.is_none_or(|b| a < b) {
                        best = Some(a);
                    }
                }
            }
        }
        best
    }

    // ---- forward operations ----

    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad,
        )
    }

    pub fn leaf_owned(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Var {
        self.push(shape, data, Op::Leaf, requires_grad)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value: Vec<T> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        let needs = self.needs(x.0);
        self.push(
            self.nodes[x.0].shape.clone(),
            value,
            Op::Relu { x: x.0 },
            needs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let value: Vec<T> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            value,
            Op::Add { a: a.0, b: b.0 },
            needs,
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let value: Vec<T> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            value,
            Op::Mul { a: a.0, b: b.0 },
            needs,
        ))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value: Vec<T> = self.nodes[x.0].value.iter().map(|&v| v * c).collect();
        let needs = self.needs(x.0);
        self.push(
            self.nodes[x.0].shape.clone(),
            value,
            Op::Scale { x: x.0, c },
            needs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.nodes[x.0].value.iter().copied().sum();
        let needs = self.needs(x.0);
        self.push(vec![1], vec![s], Op::Sum { x: x.0 }, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        kernels::matmul_nn(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            &mut out,
            m,
            k,
            n,
            true,
        );
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            vec![m, n],
            out,
            Op::Matmul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            needs,
        ))
    }

    /// x: (N,K) plus bias (K) broadcast over rows.
    pub fn add_bias_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (&self.nodes[x.0].shape, &self.nodes[bias.0].shape);
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias_row",
                lhs: sx.clone(),
                rhs: sb.clone(),
            });
        }
        let k = sx[1];
        let bv = &self.nodes[bias.0].value;
        let value: Vec<T> = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % k])
            .collect();
        let needs = self.needs(x.0) || self.needs(bias.0);
        Ok(self.push(
            sx.clone(),
            value,
            Op::AddBiasRow {
                x: x.0,
                bias: bias.0,
            },
            needs,
        ))
    }

    /// Cross-correlation conv2d: x (N,C,H,W), w (F,C,kh,kw), square kernel not required.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: sx.clone(),
                rhs: sw.clone(),
            });
        }
        let (n, c, h, wdt) = (sx[0], sx[1], sx[2], sx[3]);
        let (f, kh, kw) = (sw[0], sw[2], sw[3]);
        let fits = |size: usize, k: usize| -> Result<usize> {
            let span = size + 2 * pad;
            if span < k || !(span - k).is_multiple_of(stride) {
                return Err(TensorError::BadConvGeometry {
                    h,
                    w: wdt,
                    k,
                    stride,
                    pad,
                });
            }
            Ok((span - k) / stride + 1)
        };
        let oh = fits(h, kh)?;
        let ow = fits(wdt, kw)?;
        let dims = ConvDims {
            n,
            c_in: c,
            h,
            w: wdt,
            c_out: f,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let rows = dims.patch_rows();
        let opos = dims.out_positions();
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![T::ZERO; n * f * opos];
        out.par_chunks_mut(f * opos)
            .zip(xv.par_chunks(c * h * wdt))
            .for_each_init(
                || vec![T::ZERO; rows * opos],
                |patches, (o, xs)| {
                    kernels::im2col(xs, &dims, patches);
                    kernels::matmul_nn(wv, patches, o, f, rows, opos, false);
                },
            );
        let needs = self.needs(x.0) || self.needs(w.0);
        Ok(self.push(
            vec![n, f, oh, ow],
            out,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                dims,
            },
            needs,
        ))
    }

    /// (N,C,H,W) -> (N,C), mean over the spatial axes.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = &self.nodes[x.0].shape;
        if sx.len() != 4 {
            return Err(TensorError::InvalidShape {
                shape: sx.clone(),
                reason: "global_avg_pool expects rank 4".into(),
            });
        }
        let (n, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
        let inv = T::ONE / T::from_usize(hw);
        let xv = &self.nodes[x.0].value;
        let mut out = vec![T::ZERO; n * c];
        for i in 0..n * c {
            let mut s = T::ZERO;
            for &v in &xv[i * hw..(i + 1) * hw] {
                s += v;
            }
            out[i] = s * inv;
        }
        let needs = self.needs(x.0);
        Ok(self.push(vec![n, c], out, Op::GlobalAvgPool { x: x.0 }, needs))
    }

    fn batchnorm_common(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    ) -> Var {
        let sx = self.nodes[x.0].shape.clone();
        let (n, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let xv = &self.nodes[x.0].value;
        let mut out = vec![T::ZERO; xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                let scale = gv[ci] * inv_std[ci];
                let shift = bv[ci] - mean[ci] * scale;
                let base = (ni * c + ci) * hw;
                for p in 0..hw {
                    out[base + p] = xv[base + p] * scale + shift;
                }
            }
        }
        let needs = self.needs(x.0) || self.needs(gamma.0) || self.needs(beta.0);
        let op = if train {
            Op::BatchNormTrain {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                inv_std,
            }
        } else {
            Op::BatchNormEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                inv_std,
            }
        };
        self.push(sx, out, op, needs)
    }

    /// Training-mode batchnorm over (N,H,W) per channel. Returns the node
    /// plus the biased batch mean and variance so callers can maintain
    /// running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let sx = &self.nodes[x.0].shape;
        if sx.len() != 4 {
            return Err(TensorError::InvalidShape {
                shape: sx.clone(),
                reason: "batchnorm expects rank 4".into(),
            });
        }
        let (n, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
        self.check_bn_params(c, gamma, beta)?;
        let m = T::from_usize(n * hw);
        let xv = &self.nodes[x.0].value;
        let stats: Vec<(T, T)> = (0..c)
            .into_par_iter()
            .map(|ci| {
                let mut s = T::ZERO;
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    for p in 0..hw {
                        s += xv[base + p];
                    }
                }
                let mean = s / m;
                let mut sq = T::ZERO;
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    for p in 0..hw {
                        let d = xv[base + p] - mean;
                        sq += d * d;
                    }
                }
                (mean, sq / m)
            })
            .collect();
        let mean: Vec<T> = stats.iter().map(|s| s.0).collect();
        let var: Vec<T> = stats.iter().map(|s| s.1).collect();
        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let node = self.batchnorm_common(x, gamma, beta, mean.clone(), inv_std, true);
        Ok((node, mean, var))
    }

    /// Inference-mode batchnorm with running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let sx = &self.nodes[x.0].shape;
        if sx.len() != 4 {
            return Err(TensorError::InvalidShape {
                shape: sx.clone(),
                reason: "batchnorm expects rank 4".into(),
            });
        }
        let c = sx[1];
        self.check_bn_params(c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm_eval",
                lhs: vec![c],
                rhs: vec![running_mean.len(), running_var.len()],
            });
        }
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::ONE / (v + eps).sqrt())
            .collect();
        Ok(self.batchnorm_common(x, gamma, beta, running_mean.to_vec(), inv_std, false))
    }

    fn check_bn_params(&self, c: usize, gamma: Var, beta: Var) -> Result<()> {
        for p in [gamma, beta] {
            if self.nodes[p.0].shape != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "batchnorm",
                    lhs: vec![c],
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
        }
        Ok(())
    }

    /// Softmax over contiguous segments of the channel axis (axis 1).
    /// Accepts rank 2 (N,C) or rank 4 (N,C,H,W); the segment max is
    /// subtracted before exponentiation.
    pub fn softmax_seg(&mut self, x: Var, seg: usize) -> Result<Var> {
        let sx = self.nodes[x.0].shape.clone();
        let (n, c, inner) = match sx.len() {
            2 => (sx[0], sx[1], 1),
            4 => (sx[0], sx[1], sx[2] * sx[3]),
            _ => {
                return Err(TensorError::InvalidShape {
                    shape: sx,
                    reason: "softmax_seg expects rank 2 or 4".into(),
                })
            }
        };
        if seg == 0 || c % seg != 0 {
            return Err(TensorError::SegmentMismatch { seg, axis: c });
        }
        let xv = &self.nodes[x.0].value;
        let mut out = vec![T::ZERO; xv.len()];
        for ni in 0..n {
            for p in 0..inner {
                for g in 0..c / seg {
                    let idx = |j: usize| (ni * c + g * seg + j) * inner + p;
                    let mut m = xv[idx(0)];
                    for j in 1..seg {
                        m = m.maximum(xv[idx(j)]);
                    }
                    let mut total = T::ZERO;
                    for j in 0..seg {
                        let e = (xv[idx(j)] - m).exp();
                        out[idx(j)] = e;
                        total += e;
                    }
                    for j in 0..seg {
                        out[idx(j)] /= total;
                    }
                }
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(sx, out, Op::SoftmaxSeg { x: x.0, seg }, needs))
    }

    /// Mean cross-entropy from logits (N,K) against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sx = &self.nodes[logits.0].shape;
        if sx.len() != 2 || sx[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: sx.clone(),
                rhs: vec![labels.len()],
            });
        }
        let (n, k) = (sx[0], sx[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::InvalidShape {
                shape: sx.clone(),
                reason: format!("label {bad} out of range for {k} classes"),
            });
        }
        let xv = &self.nodes[logits.0].value;
        let mut probs = vec![T::ZERO; n * k];
        let mut loss = T::ZERO;
        for i in 0..n {
            let row = &xv[i * k..(i + 1) * k];
            let mut m = row[0];
            for &v in &row[1..] {
                m = m.maximum(v);
            }
            let mut total = T::ZERO;
            for j in 0..k {
                let e = (row[j] - m).exp();
                probs[i * k + j] = e;
                total += e;
            }
            for j in 0..k {
                probs[i * k + j] /= total;
            }
            // -log p[label] = log(total) - (x[label] - m)
            loss += total.ln() - (row[labels[i]] - m);
        }
        loss /= T::from_usize(n);
        let needs = self.needs(logits.0);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// out = x ⊙ gate where the gate is treated as a constant in backward.
    /// The gate is produced by `make_gate` from the forward value of `x`,
    /// unless the graph is replaying recorded gates.
    pub fn mul_gated(&mut self, x: Var, make_gate: impl FnOnce(&[T]) -> Vec<T>) -> Result<Var> {
        let gate = if let Some(replay) = &self.replay_gates {
            let g = replay
                .get(self.replay_pos)
                .ok_or(TensorError::GateReplayExhausted)?
                .clone();
            self.replay_pos += 1;
            g
        } else {
            make_gate(&self.nodes[x.0].value)
        };
        if gate.len() != self.nodes[x.0].value.len() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_gated",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: vec![gate.len()],
            });
        }
        if self.recording_gates {
            self.recorded_gates.push(gate.clone());
        }
        let value: Vec<T> = self.nodes[x.0]
            .value
            .iter()
            .zip(&gate)
            .map(|(&v, &g)| v * g)
            .collect();
        let needs = self.needs(x.0);
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            value,
            Op::MulGated { x: x.0, gate },
            needs,
        ))
    }

    /// Insert a value computed off-tape with the shape of `like`.
    /// Gradients do not flow through; inference-only.
    pub fn detached(&mut self, like: Var, value: Vec<T>) -> Result<Var> {
        if value.len() != self.nodes[like.0].value.len() {
            return Err(TensorError::ShapeMismatch {
                op: "detached",
                lhs: self.nodes[like.0].shape.clone(),
                rhs: vec![value.len()],
            });
        }
        Ok(self.push(self.nodes[like.0].shape.clone(), value, Op::Detached, false))
    }

    // ---- backward ----

    /// Populate gradients of `loss` w.r.t. every node that needs them.
    /// Errors when called twice on the same graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::BackwardConsumed);
        }
        if self.nodes[loss.0].shape != [1] {
            return Err(TensorError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(TensorError::NoGradPath);
        }
        self.consumed = true;
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n_nodes];
        grads[loss.0] = Some(vec![T::ONE]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.dispatch_backward(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn dispatch_backward(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let ensure = |grads: &mut [Option<Vec<T>>], idx: usize, len: usize| {
            grads[idx].get_or_insert_with(|| vec![T::ZERO; len]);
        };
        match &self.nodes[id].op {
            Op::Leaf | Op::Detached => {}
            Op::Relu { x } => {
                if self.needs(*x) {
                    ensure(grads, *x, g.len());
                    let dst = grads[*x].as_mut().unwrap();
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(&self.nodes[*x].value) {
                        if xv > T::ZERO {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for &p in [a, b].into_iter() {
                    if self.needs(p) {
                        ensure(grads, p, g.len());
                        let dst = grads[p].as_mut().unwrap();
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    ensure(grads, *a, g.len());
                    let dst = grads[*a].as_mut().unwrap();
                    for ((d, &gv), &bv) in dst.iter_mut().zip(g).zip(&self.nodes[*b].value) {
                        *d += gv * bv;
                    }
                }
                if self.needs(*b) {
                    ensure(grads, *b, g.len());
                    let dst = grads[*b].as_mut().unwrap();
                    for ((d, &gv), &av) in dst.iter_mut().zip(g).zip(&self.nodes[*a].value) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.needs(*x) {
                    ensure(grads, *x, g.len());
                    let dst = grads[*x].as_mut().unwrap();
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv * *c;
                    }
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let len = self.nodes[*x].value.len();
                    ensure(grads, *x, len);
                    let dst = grads[*x].as_mut().unwrap();
                    for d in dst.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                if self.needs(*a) {
                    ensure(grads, *a, m * k);
                    kernels::matmul_nt_acc(
                        g,
                        &self.nodes[*b].value,
                        grads[*a].as_mut().unwrap(),
                        *m,
                        *n,
                        *k,
                        true,
                    );
                }
                if self.needs(*b) {
                    ensure(grads, *b, k * n);
                    kernels::matmul_tn_acc(
                        &self.nodes[*a].value,
                        g,
                        grads[*b].as_mut().unwrap(),
                        *k,
                        *m,
                        *n,
                        true,
                    );
                }
            }
            Op::AddBiasRow { x, bias } => {
                if self.needs(*x) {
                    ensure(grads, *x, g.len());
                    let dst = grads[*x].as_mut().unwrap();
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if self.needs(*bias) {
                    let k = self.nodes[*bias].value.len();
                    ensure(grads, *bias, k);
                    let dst = grads[*bias].as_mut().unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        dst[i % k] += gv;
                    }
                }
            }
            Op::Conv2d { x, w, dims } => {
                let rows = dims.patch_rows();
                let opos = dims.out_positions();
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                if self.needs(*w) {
                    ensure(grads, *w, wv.len());
                    let dw = grads[*w].as_mut().unwrap();
                    let mut patches = vec![T::ZERO; rows * opos];
                    let chw = dims.c_in * dims.h * dims.w;
                    for s in 0..dims.n {
                        kernels::im2col(&xv[s * chw..(s + 1) * chw], dims, &mut patches);
                        kernels::matmul_nt_acc(
                            &g[s * dims.c_out * opos..(s + 1) * dims.c_out * opos],
                            &patches,
                            dw,
                            dims.c_out,
                            opos,
                            rows,
                            true,
                        );
                    }
                }
                if self.needs(*x) {
                    ensure(grads, *x, xv.len());
                    let dx = grads[*x].as_mut().unwrap();
                    dx.par_chunks_mut(dims.c_in * dims.h * dims.w)
                        .zip(g.par_chunks(dims.c_out * opos))
                        .for_each_init(
                            || vec![T::ZERO; rows * opos],
                            |dpatches, (dxs, gs)| {
                                dpatches.fill(T::ZERO);
                                kernels::matmul_tn_acc(
                                    wv, gs, dpatches, rows, dims.c_out, opos, false,
                                );
                                kernels::col2im_acc(dpatches, dims, dxs);
                            },
                        );
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.needs(*x) {
                    let len = self.nodes[*x].value.len();
                    let hw = len / g.len();
                    let inv = T::ONE / T::from_usize(hw);
                    ensure(grads, *x, len);
                    let dst = grads[*x].as_mut().unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        let gd = gv * inv;
                        for d in &mut dst[i * hw..(i + 1) * hw] {
                            *d += gd;
                        }
                    }
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let shape = &self.nodes[id].shape;
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let m = T::from_usize(n * hw);
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gamma].value;
                // per-channel reductions over the incoming gradient
                let mut g_sum = vec![T::ZERO; c];
                let mut gx_sum = vec![T::ZERO; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        let mut s = T::ZERO;
                        let mut sx = T::ZERO;
                        for p in 0..hw {
                            let gg = g[base + p];
                            s += gg;
                            sx += gg * (xv[base + p] - mean[ci]) * inv_std[ci];
                        }
                        g_sum[ci] += s;
                        gx_sum[ci] += sx;
                    }
                }
                if self.needs(*beta) {
                    ensure(grads, *beta, c);
                    let dst = grads[*beta].as_mut().unwrap();
                    for ci in 0..c {
                        dst[ci] += g_sum[ci];
                    }
                }
                if self.needs(*gamma) {
                    ensure(grads, *gamma, c);
                    let dst = grads[*gamma].as_mut().unwrap();
                    for ci in 0..c {
                        dst[ci] += gx_sum[ci];
                    }
                }
                if self.needs(*x) {
                    ensure(grads, *x, xv.len());
                    let dst = grads[*x].as_mut().unwrap();
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let scale = gv[ci] * inv_std[ci];
                            let gm = g_sum[ci] / m;
                            let gxm = gx_sum[ci] / m;
                            for p in 0..hw {
                                let xhat = (xv[base + p] - mean[ci]) * inv_std[ci];
                                dst[base + p] += scale * (g[base + p] - gm - xhat * gxm);
                            }
                        }
                    }
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let shape = &self.nodes[id].shape;
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gamma].value;
                if self.needs(*x) {
                    ensure(grads, *x, xv.len());
                    let dst = grads[*x].as_mut().unwrap();
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let scale = gv[ci] * inv_std[ci];
                            for p in 0..hw {
                                dst[base + p] += g[base + p] * scale;
                            }
                        }
                    }
                }
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut g_sum = vec![T::ZERO; c];
                    let mut gx_sum = vec![T::ZERO; c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            for p in 0..hw {
                                let gg = g[base + p];
                                g_sum[ci] += gg;
                                gx_sum[ci] += gg * (xv[base + p] - mean[ci]) * inv_std[ci];
                            }
                        }
                    }
                    if self.needs(*beta) {
                        ensure(grads, *beta, c);
                        let dst = grads[*beta].as_mut().unwrap();
                        for ci in 0..c {
                            dst[ci] += g_sum[ci];
                        }
                    }
                    if self.needs(*gamma) {
                        ensure(grads, *gamma, c);
                        let dst = grads[*gamma].as_mut().unwrap();
                        for ci in 0..c {
                            dst[ci] += gx_sum[ci];
                        }
                    }
                }
            }
            Op::SoftmaxSeg { x, seg } => {
                let seg = *seg;
                if self.needs(*x) {
                    let shape = &self.nodes[id].shape;
                    let (n, c, inner) = match shape.len() {
                        2 => (shape[0], shape[1], 1),
                        _ => (shape[0], shape[1], shape[2] * shape[3]),
                    };
                    let y = &self.nodes[id].value;
                    ensure(grads, *x, y.len());
                    let dst = grads[*x].as_mut().unwrap();
                    for ni in 0..n {
                        for p in 0..inner {
                            for gseg in 0..c / seg {
                                let idx = |j: usize| (ni * c + gseg * seg + j) * inner + p;
                                let mut dot = T::ZERO;
                                for j in 0..seg {
                                    dot += g[idx(j)] * y[idx(j)];
                                }
                                for j in 0..seg {
                                    let i = idx(j);
                                    dst[i] += y[i] * (g[i] - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if self.needs(*logits) {
                    let k = self.nodes[*logits].shape[1];
                    let n = labels.len();
                    let invn = T::ONE / T::from_usize(n);
                    ensure(grads, *logits, n * k);
                    let dst = grads[*logits].as_mut().unwrap();
                    let gs = g[0] * invn;
                    for i in 0..n {
                        for j in 0..k {
                            let onehot = if labels[i] == j { T::ONE } else { T::ZERO };
                            dst[i * k + j] += gs * (probs[i * k + j] - onehot);
                        }
                    }
                }
            }
            Op::MulGated { x, gate } => {
                if self.needs(*x) {
                    ensure(grads, *x, g.len());
                    let dst = grads[*x].as_mut().unwrap();
                    for ((d, &gv), &gate_v) in dst.iter_mut().zip(g).zip(gate) {
                        *d += gv * gate_v;
                    }
                }
            }
        }
    }
}
