//! SGD training with annealed temperatures, plus dataset plumbing,
//! augmentation, and accuracy evaluation.

use crate::model::{ActivationMode, ForwardMode, Model};
use crate::util::{permutation, rng_from};
use crate::wta::{temperature_at, TemperatureSchedule};
use crate::{NetError, Result};
use dham_tensor::{Graph, Tensor};
use rand::Rng;

/// 8-bit images with integer labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Vec<u8>,
    pub labels: Vec<u16>,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<u8>,
        labels: Vec<u16>,
        (c, h, w): (usize, usize, usize),
        classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(NetError::BadConfig("dataset is empty".into()));
        }
        if images.len() != n * c * h * w {
            return Err(NetError::ShapeMismatch(format!(
                "image buffer holds {} bytes, expected {}",
                images.len(),
                n * c * h * w
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(NetError::BadConfig(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            images,
            labels,
            n,
            c,
            h,
            w,
            classes,
        })
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let sz = self.c * self.h * self.w;
        &self.images[i * sz..(i + 1) * sz]
    }

    /// Reinterpret the label space (e.g. a 10-class container holding only
    /// 4 distinct labels); labels must fit.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= classes) {
            return Err(NetError::BadConfig(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        self.classes = classes;
        Ok(self)
    }

    /// First `n` examples (the whole set when `n` is 0 or larger).
    pub fn limit(&self, n: usize) -> Self {
        if n == 0 || n >= self.n {
            return self.clone();
        }
        let sz = self.c * self.h * self.w;
        Self {
            images: self.images[..n * sz].to_vec(),
            labels: self.labels[..n].to_vec(),
            n,
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs at which the learning rate is divided by 10.
    pub lr_drop_epochs: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            lr: 0.05,
            lr_drop_epochs: vec![7, 13],
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: true,
            seed: 0,
        }
    }
}

/// lr(e) = base · 0.1^(number of drops at or before e); epochs are 1-based.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = cfg.lr_drop_epochs.iter().filter(|&&d| d <= epoch).count();
    cfg.lr * 0.1f64.powi(drops as i32)
}

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    /// Temperature at the first optimizer step of the epoch (anneal mode).
    pub temperature: Option<f64>,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub total_steps: usize,
    /// Temperature used by the very first and very last optimizer step.
    pub temperature_first: Option<f64>,
    pub temperature_last: Option<f64>,
}

/// Momentum-SGD state, one velocity buffer per trainable tensor.
pub struct SgdState {
    velocities: Vec<Vec<f32>>,
    pub step: usize,
}

impl SgdState {
    pub fn new(model: &Model) -> Self {
        let velocities = model
            .named_tensors()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, t, _)| vec![0.0f32; t.numel()])
            .collect();
        Self {
            velocities,
            step: 0,
        }
    }
}

/// One optimizer step on one batch; returns the mean cross-entropy.
/// v ← momentum·v + grad + wd·param; param ← param − lr·v.
#[allow(clippy::too_many_arguments)]
pub fn sgd_step(
    model: &mut Model,
    state: &mut SgdState,
    batch: &Tensor<f32>,
    labels: &[usize],
    mode: ForwardMode,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<f64> {
    let (loss, _) = sgd_step_with_acc(
        model,
        state,
        batch,
        labels,
        mode,
        lr,
        momentum,
        weight_decay,
    )?;
    Ok(loss)
}

/// Per-channel mean/std of a dataset in unit pixel scale (values / 255).
pub fn normalization_stats(data: &LabeledDataset) -> (Vec<f32>, Vec<f32>) {
    let plane = data.h * data.w;
    let mut mean = vec![0.0f64; data.c];
    let mut var = vec![0.0f64; data.c];
    let count = (data.n * plane) as f64;
    for i in 0..data.n {
        let img = data.image(i);
        for ch in 0..data.c {
            for &p in &img[ch * plane..(ch + 1) * plane] {
                mean[ch] += p as f64 / 255.0;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for i in 0..data.n {
        let img = data.image(i);
        for ch in 0..data.c {
            for &p in &img[ch * plane..(ch + 1) * plane] {
                let d = p as f64 / 255.0 - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    let std: Vec<f32> = var
        .iter()
        .map(|v| (((v / count).sqrt()).max(1e-6)) as f32)
        .collect();
    (mean.iter().map(|&m| m as f32).collect(), std)
}

/// Convert raw u8 images to a normalized f32 batch using the model's stored
/// normalization constants.
pub fn prepare_batch(
    images: &[u8],
    n: usize,
    (c, h, w): (usize, usize, usize),
    norm_mean: &[f32],
    norm_std: &[f32],
) -> Tensor<f32> {
    let plane = h * w;
    let mut data = vec![0.0f32; n * c * plane];
    for i in 0..n {
        for ch in 0..c {
            let m = norm_mean[ch];
            let s = norm_std[ch];
            let src = &images[(i * c + ch) * plane..(i * c + ch + 1) * plane];
            let dst = &mut data[(i * c + ch) * plane..(i * c + ch + 1) * plane];
            for (d, &p) in dst.iter_mut().zip(src) {
                *d = (p as f32 / 255.0 - m) / s;
            }
        }
    }
    Tensor::new(vec![n, c, h, w], data).expect("shape matches buffer")
}

pub const AUGMENT_PAD: usize = 4;

/// Per-image augmentation draw: crop offsets in 0..=2·PAD and a flip bit,
/// derived from the seed and the image's position so the result does not
/// depend on traversal order.
pub fn augment_params(seed: u64, index: usize) -> (usize, usize, bool) {
    let mut rng = rng_from(seed, &[0x617567, index as u64]);
    let dy = rng.random_range(0..=2 * AUGMENT_PAD);
    let dx = rng.random_range(0..=2 * AUGMENT_PAD);
    let flip = rng.random_range(0..2u8) == 1;
    (dy, dx, flip)
}

/// Apply one crop-and-flip: the image is zero-padded by PAD on each side and
/// a full-size window is cut at offset (dy, dx); (PAD, PAD) with no flip is
/// the identity.
pub fn augment_one(
    src: &[u8],
    dst: &mut [u8],
    (c, h, w): (usize, usize, usize),
    (dy, dx, flip): (usize, usize, bool),
) {
    let plane = h * w;
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - AUGMENT_PAD as isize;
            for x in 0..w {
                let sx = (x + dx) as isize - AUGMENT_PAD as isize;
                let v = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                    0
                } else {
                    src[ch * plane + sy as usize * w + sx as usize]
                };
                let tx = if flip { w - 1 - x } else { x };
                dst[ch * plane + y * w + tx] = v;
            }
        }
    }
}

/// Random 4-pixel-pad crop plus horizontal flip with probability 1/2,
/// independently per image, deterministic given the seed.
pub fn augment(
    images: &[u8],
    n: usize,
    (c, h, w): (usize, usize, usize),
    seed: u64,
) -> Result<Vec<u8>> {
    if h != w {
        return Err(NetError::BadConfig(format!(
            "augmentation expects square images, got {h}x{w}"
        )));
    }
    let plane = c * h * w;
    let mut out = vec![0u8; images.len()];
    for i in 0..n {
        augment_one(
            &images[i * plane..(i + 1) * plane],
            &mut out[i * plane..(i + 1) * plane],
            (c, h, w),
            augment_params(seed, i),
        );
    }
    Ok(out)
}

fn gather_images(data: &LabeledDataset, indices: &[usize]) -> (Vec<u8>, Vec<usize>) {
    let sz = data.c * data.h * data.w;
    let mut images = Vec::with_capacity(indices.len() * sz);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        images.extend_from_slice(data.image(i));
        labels.push(data.labels[i] as usize);
    }
    (images, labels)
}

fn model_norm(model: &Model) -> (Vec<f32>, Vec<f32>) {
    (
        model
            .tensor("norm.mean")
            .expect("norm.mean")
            .data()
            .to_vec(),
        model.tensor("norm.std").expect("norm.std").data().to_vec(),
    )
}

/// Top-1 accuracy over a dataset in the requested activation mode.
pub fn evaluate(model: &mut Model, data: &LabeledDataset, mode: ForwardMode) -> Result<f64> {
    let (mean, std) = model_norm(model);
    let shape = (data.c, data.h, data.w);
    let mut correct = 0usize;
    let batch = 256usize;
    let mut i = 0;
    while i < data.n {
        let end = (i + batch).min(data.n);
        let idx: Vec<usize> = (i..end).collect();
        let (images, labels) = gather_images(data, &idx);
        let x = prepare_batch(&images, idx.len(), shape, &mean, &std);
        let mut graph = Graph::new();
        let out = model.forward(&mut graph, &x, mode, false, false)?;
        let logits = graph.value(out.logits);
        let k = data.classes;
        for (row, &label) in labels.iter().enumerate() {
            let seg = &logits[row * k..(row + 1) * k];
            let mut best = 0;
            for (j, &v) in seg.iter().enumerate() {
                if v > seg[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        i = end;
    }
    Ok(correct as f64 / data.n as f64)
}

/// Train a model in place. The temperature advances per optimizer step along
/// the configured schedule; the learning rate follows the drop rule; one
/// report row per epoch.
pub fn train(
    model: &mut Model,
    train_set: &LabeledDataset,
    val_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(NetError::BadConfig(
            "epochs and batch_size must be positive".into(),
        ));
    }
    if train_set.classes != model.config.classes {
        return Err(NetError::BadConfig(format!(
            "dataset has {} classes, model expects {}",
            train_set.classes, model.config.classes
        )));
    }
    let shape = (train_set.c, train_set.h, train_set.w);
    let steps_per_epoch = train_set.n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let schedule = match model.config.mode {
        ActivationMode::Anneal { t_init, t_final } => {
            Some(TemperatureSchedule::new(t_init, t_final, total_steps)?)
        }
        _ => None,
    };
    let mode_at = |step: usize, model: &Model| -> Result<ForwardMode> {
        Ok(match &schedule {
            Some(s) => ForwardMode::Anneal {
                t: temperature_at(s, step.min(s.total_steps))?,
            },
            None => model.configured_mode(0.0),
        })
    };

    // input normalization from the training set
    let (mean, std) = normalization_stats(train_set);
    model
        .tensor_mut("norm.mean")
        .expect("norm.mean")
        .data_mut()
        .copy_from_slice(&mean);
    model
        .tensor_mut("norm.std")
        .expect("norm.std")
        .data_mut()
        .copy_from_slice(&std);

    let mut state = SgdState::new(model);
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut temperature_first = None;
    let mut temperature_last = None;

    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        let mut shuffle_rng = rng_from(cfg.seed, &[0x736875, epoch as u64]);
        let order = permutation(train_set.n, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut epoch_temp = None;

        for chunk in order.chunks(cfg.batch_size) {
            let mode = mode_at(state.step, model)?;
            if let ForwardMode::Anneal { t } = mode {
                epoch_temp.get_or_insert(t);
                temperature_first.get_or_insert(t);
                temperature_last = Some(t);
            }
            let (mut images, labels) = gather_images(train_set, chunk);
            if cfg.augment {
                if train_set.h != train_set.w {
                    return Err(NetError::BadConfig(format!(
                        "augmentation expects square images, got {}x{}",
                        train_set.h, train_set.w
                    )));
                }
                // per-image draws are keyed by (epoch, dataset index), so an
                // image's augmentation does not depend on its batch position
                let aug_seed = crate::util::derive_seed(cfg.seed, &[0x65706f6368, epoch as u64]);
                let plane = train_set.c * train_set.h * train_set.w;
                let src = images.clone();
                for (slot, &idx) in chunk.iter().enumerate() {
                    augment_one(
                        &src[slot * plane..(slot + 1) * plane],
                        &mut images[slot * plane..(slot + 1) * plane],
                        shape,
                        augment_params(aug_seed, idx),
                    );
                }
            }
            let x = prepare_batch(&images, chunk.len(), shape, &mean, &std);
            let (loss, correct) = sgd_step_with_acc(
                model,
                &mut state,
                &x,
                &labels,
                mode,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
            epoch_loss += loss * chunk.len() as f64;
            epoch_correct += correct;
        }

        let val_acc = match val_set {
            Some(v) => Some(evaluate(model, v, mode_at(state.step, model)?)?),
            None => None,
        };
        rows.push(EpochRow {
            epoch,
            lr,
            temperature: epoch_temp,
            train_loss: epoch_loss / train_set.n as f64,
            train_acc: epoch_correct as f64 / train_set.n as f64,
            val_acc,
        });
    }

    Ok(TrainReport {
        rows,
        total_steps,
        temperature_first,
        temperature_last,
    })
}

#[allow(clippy::too_many_arguments)]
fn sgd_step_with_acc(
    model: &mut Model,
    state: &mut SgdState,
    batch: &Tensor<f32>,
    labels: &[usize],
    mode: ForwardMode,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(f64, usize)> {
    let mut graph = Graph::new();
    let out = model.forward(&mut graph, batch, mode, true, false)?;
    let loss = graph.cross_entropy(out.logits, labels)?;
    let loss_val = graph.value(loss)[0] as f64;
    if !loss_val.is_finite() {
        return Err(NetError::NonFiniteLoss {
            step: state.step,
            loss: loss_val,
        });
    }
    let k = model.config.classes;
    let logits = graph.value(out.logits);
    let mut correct = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        let seg = &logits[row * k..(row + 1) * k];
        let mut best = 0;
        for (j, &v) in seg.iter().enumerate() {
            if v > seg[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    graph.backward(loss)?;
    let grads: Vec<Vec<f32>> = out
        .param_vars
        .iter()
        .map(|&v| {
            graph
                .grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; graph.value(v).len()])
        })
        .collect();
    if grads.len() != state.velocities.len() {
        return Err(NetError::ShapeMismatch(format!(
            "{} parameter gradients for {} velocity buffers",
            grads.len(),
            state.velocities.len()
        )));
    }
    model.update_trainable(|slot, _name, tensor| {
        sgd_update(
            tensor.data_mut(),
            &grads[slot],
            &mut state.velocities[slot],
            lr,
            momentum,
            weight_decay,
        );
    });
    state.step += 1;
    Ok((loss_val, correct))
}

/// The update rule itself: v ← momentum·v + g + wd·p; p ← p − lr·v.
pub fn sgd_update(
    params: &mut [f32],
    grads: &[f32],
    velocity: &mut [f32],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let lr = lr as f32;
    let momentum = momentum as f32;
    let wd = weight_decay as f32;
    for ((vi, pi), gi) in velocity.iter_mut().zip(params).zip(grads) {
        *vi = momentum * *vi + *gi + wd * *pi;
        *pi -= lr * *vi;
    }
}
