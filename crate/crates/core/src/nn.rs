//! Variable-length convolutional symbol decoder.
//!
//! A frame of `N` samples by `D` subcarriers is convolved (stride 1, no
//! padding) with `K` filters of each width `H`. Each filter's `N - H + 1`
//! responses pass through ReLU and are reduced to one scalar by 1-max
//! pooling, so every frame maps to `K * |widths|` features regardless of
//! `N`. A fully-connected layer and softmax produce the two symbol
//! probabilities.
//!
//! Parameters live in one flat `Vec<f64>`; gradients use the same layout,
//! which keeps SGD, finite-difference checks and checkpoints trivial.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::types::{Frame, LabeledDataset, LabeledFrame, SymbolLabel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub classes: usize,
}

impl ModelConfig {
    /// CSI decoder: 12 overlapped subcarriers.
    pub fn csi_default() -> Self {
        Self::with_input_dim(12)
    }

    /// RSSI decoder: one scalar per sample.
    pub fn rssi_default() -> Self {
        Self::with_input_dim(1)
    }

    pub fn with_input_dim(input_dim: usize) -> Self {
        Self {
            input_dim,
            filter_widths: vec![3, 4, 5],
            filters_per_width: 64,
            classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.filters_per_width == 0 || self.filter_widths.is_empty() {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.filter_widths.contains(&0) {
            return Err(Error::InvalidConfig("filter widths must be >= 1".into()));
        }
        if self.classes != 2 {
            return Err(Error::InvalidConfig("the decoder is binary (2 classes)".into()));
        }
        Ok(())
    }

    pub fn max_width(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }

    pub fn feature_count(&self) -> usize {
        self.filters_per_width * self.filter_widths.len()
    }

    pub fn param_count(&self) -> usize {
        let conv: usize = self
            .filter_widths
            .iter()
            .map(|h| self.filters_per_width * (h * self.input_dim + 1))
            .sum();
        conv + self.feature_count() * self.classes + self.classes
    }

    fn layout(&self) -> Layout {
        let k = self.filters_per_width;
        let d = self.input_dim;
        let mut off = 0;
        let banks = self
            .filter_widths
            .iter()
            .map(|&h| {
                let b = Bank {
                    width: h,
                    weights: off,
                    biases: off + k * h * d,
                };
                off += k * (h * d + 1);
                b
            })
            .collect();
        let fc_weights = off;
        let fc_biases = fc_weights + self.feature_count() * self.classes;
        Layout {
            banks,
            fc_weights,
            fc_biases,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bank {
    width: usize,
    weights: usize,
    biases: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    banks: Vec<Bank>,
    fc_weights: usize,
    fc_biases: usize,
}

/// A parameter snapshot, or a gradient with the same shape.
///
/// Layout: for each filter width in order, `K` row-major `H x D` kernels
/// followed by `K` biases; then the `F x C` fully-connected weights (row per
/// feature) and `C` class biases.
/// Fixed per-subcarrier standardization applied to every input sample,
/// `(x - shift) * scale`. Not trainable and not counted as a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(d: usize) -> Self {
        Self {
            shift: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Mean and inverse standard deviation per subcarrier over every sample
    /// of every frame. Constant subcarriers keep unit scale.
    pub fn fit<'a>(d: usize, frames: impl IntoIterator<Item = &'a Frame>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for f in frames {
            for s in f.samples() {
                n += 1;
                for (i, &v) in s.values.iter().enumerate().take(d) {
                    sum[i] += v;
                    sq[i] += v * v;
                }
            }
        }
        if n == 0 {
            return Self::identity(d);
        }
        let n = n as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.shift.len() != d || self.scale.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: if self.shift.len() != d {
                    self.shift.len()
                } else {
                    self.scale.len()
                },
            });
        }
        if self.shift.iter().chain(&self.scale).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("input normalization must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    values: Vec<f64>,
    norm: InputNorm,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.param_count();
        Ok(Self {
            norm: InputNorm::identity(config.input_dim),
            config,
            values: vec![0.0; n],
        })
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.param_count() {
            return Err(Error::LengthMismatch {
                expected: config.param_count(),
                got: values.len(),
            });
        }
        Ok(Self {
            norm: InputNorm::identity(config.input_dim),
            config,
            values,
        })
    }

    pub fn with_input_norm(mut self, norm: InputNorm) -> Result<Self> {
        norm.validate(self.config.input_dim)?;
        self.norm = norm;
        Ok(self)
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fully-connected weights and class biases.
    pub fn dense_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let l = self.config.layout();
        let (head, biases) = self.values.split_at_mut(l.fc_biases);
        (&mut head[l.fc_weights..], biases)
    }

    /// Kernel `k` of width index `bank` (row-major H x D) and its bias.
    pub fn filter_mut(&mut self, bank: usize, k: usize) -> (&mut [f64], &mut f64) {
        let l = self.config.layout();
        let b = l.banks[bank];
        let hd = b.width * self.config.input_dim;
        let (head, tail) = self.values.split_at_mut(b.biases);
        (&mut head[b.weights + k * hd..b.weights + (k + 1) * hd], &mut tail[k])
    }
}

/// Glorot-uniform weights per layer, zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = config.layout();
    let k = config.filters_per_width;
    let d = config.input_dim;
    for b in &l.banks {
        let fan_in = (b.width * d) as f64;
        let fan_out = (b.width * k) as f64;
        let s = (6.0 / (fan_in + fan_out)).sqrt();
        for v in &mut p.values[b.weights..b.biases] {
            *v = rng.random_range(-s..=s);
        }
    }
    let s = (6.0 / (config.feature_count() + config.classes) as f64).sqrt();
    for v in &mut p.values[l.fc_weights..l.fc_biases] {
        *v = rng.random_range(-s..=s);
    }
    Ok(p)
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Pooled feature per filter, `max(0, max_j z_j)`.
    pub pooled: Vec<f64>,
    /// First window position attaining the maximal pre-activation.
    pub argmax: Vec<usize>,
    /// Maximal pre-activation per filter, before ReLU.
    pub max_preact: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probs: [f64; 2],
    pub trace: ForwardTrace,
}

fn flatten(norm: &InputNorm, frame: &Frame) -> Vec<f64> {
    frame
        .samples()
        .iter()
        .flat_map(|s| {
            s.values
                .iter()
                .zip(norm.shift.iter().zip(&norm.scale))
                .map(|(v, (m, k))| (v - m) * k)
        })
        .collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_frame(config: &ModelConfig, frame: &Frame) -> Result<()> {
    if frame.dim() != config.input_dim {
        return Err(Error::LengthMismatch {
            expected: config.input_dim,
            got: frame.dim(),
        });
    }
    let required = config.max_width();
    if frame.len() < required {
        return Err(Error::FrameTooShort {
            n: frame.len(),
            required,
        });
    }
    Ok(())
}

pub fn forward(params: &ModelParams, frame: &Frame) -> Result<ForwardOutput> {
    let cfg = &params.config;
    check_frame(cfg, frame)?;
    let l = cfg.layout();
    let d = cfg.input_dim;
    let k = cfg.filters_per_width;
    let n = frame.len();
    let x = flatten(&params.norm, frame);
    let w = &params.values;

    let f = cfg.feature_count();
    let mut pooled = Vec::with_capacity(f);
    let mut argmax = Vec::with_capacity(f);
    let mut max_preact = Vec::with_capacity(f);
    for b in &l.banks {
        let hd = b.width * d;
        let positions = n - b.width + 1;
        for i in 0..k {
            let kernel = &w[b.weights + i * hd..b.weights + (i + 1) * hd];
            let bias = w[b.biases + i];
            let mut best = f64::NEG_INFINITY;
            let mut best_j = 0;
            for j in 0..positions {
                let z = bias + dot(kernel, &x[j * d..j * d + hd]);
                if z > best {
                    best = z;
                    best_j = j;
                }
            }
            pooled.push(best.max(0.0));
            argmax.push(best_j);
            max_preact.push(best);
        }
    }

    let c = cfg.classes;
    let fc = &w[l.fc_weights..l.fc_biases];
    let mut logits: Vec<f64> = w[l.fc_biases..l.fc_biases + c].to_vec();
    for (fi, &p) in pooled.iter().enumerate() {
        if p != 0.0 {
            for (ci, lg) in logits.iter_mut().enumerate() {
                *lg += p * fc[fi * c + ci];
            }
        }
    }
    let probs = softmax2(&logits);
    Ok(ForwardOutput {
        probs,
        trace: ForwardTrace {
            pooled,
            argmax,
            max_preact,
            logits,
        },
    })
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Argmax of the class probabilities; ties go to symbol 0.
pub fn label_from_probs(probs: [f64; 2]) -> SymbolLabel {
    if probs[1] > probs[0] {
        SymbolLabel::One
    } else {
        SymbolLabel::Zero
    }
}

pub fn predict(params: &ModelParams, frame: &Frame) -> Result<SymbolLabel> {
    Ok(label_from_probs(forward(params, frame)?.probs))
}

/// Adds the gradient of `-ln p[label]` for one frame into `grad`; returns
/// the loss.
fn accumulate_example(params: &ModelParams, frame: &Frame, label: SymbolLabel, grad: &mut [f64]) -> Result<f64> {
    let out = forward(params, frame)?;
    let cfg = &params.config;
    let l = cfg.layout();
    let d = cfg.input_dim;
    let k = cfg.filters_per_width;
    let c = cfg.classes;
    let w = &params.values;

    let y = label.index();
    let loss = -out.probs[y].max(f64::MIN_POSITIVE).ln();
    let mut dlogits = out.probs.to_vec();
    dlogits[y] -= 1.0;

    for (ci, g) in dlogits.iter().enumerate() {
        grad[l.fc_biases + ci] += g;
    }
    let fc = &w[l.fc_weights..l.fc_biases];
    let x = flatten(&params.norm, frame);
    let mut fi = 0;
    for b in &l.banks {
        let hd = b.width * d;
        for i in 0..k {
            let p = out.trace.pooled[fi];
            let mut dpool = 0.0;
            for ci in 0..c {
                grad[l.fc_weights + fi * c + ci] += p * dlogits[ci];
                dpool += fc[fi * c + ci] * dlogits[ci];
            }
            // ReLU passes gradient only when the pooled pre-activation is positive;
            // max pooling routes it to the first argmax window.
            if out.trace.max_preact[fi] > 0.0 {
                let j = out.trace.argmax[fi];
                let window = &x[j * d..j * d + hd];
                let g = &mut grad[b.weights + i * hd..b.weights + (i + 1) * hd];
                for (gv, xv) in g.iter_mut().zip(window) {
                    *gv += dpool * xv;
                }
                grad[b.biases + i] += dpool;
            }
            fi += 1;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: ModelParams,
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[LabeledFrame]) -> Result<LossAndGrad> {
    loss_and_grad_with(params, batch, Exec::default())
}

pub fn loss_and_grad_with(params: &ModelParams, batch: &[LabeledFrame], exec: Exec) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let n = params.len();
    let parts = exec.map(batch, |e| {
        let mut g = vec![0.0; n];
        accumulate_example(params, &e.frame, e.label, &mut g).map(|loss| (loss, g))
    });
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    // Fixed-order reduction keeps results independent of the execution policy.
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(LossAndGrad {
        loss: loss * scale,
        grad: ModelParams {
            config: params.config.clone(),
            values: grad,
            norm: params.norm.clone(),
        },
    })
}

/// `p <- p - alpha * g` for every parameter.
pub fn sgd_step(params: &ModelParams, grad: &ModelParams, alpha: f64) -> Result<ModelParams> {
    if params.config != grad.config {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidConfig("step size must be non-negative".into()));
    }
    let mut values = Vec::with_capacity(params.len());
    for (i, (p, g)) in params.values.iter().zip(&grad.values).enumerate() {
        let v = p - alpha * g;
        if !v.is_finite() {
            return Err(Error::NonFiniteUpdate { index: i });
        }
        values.push(v);
    }
    Ok(ModelParams {
        config: params.config.clone(),
        values,
        norm: params.norm.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub max_batches: usize,
    pub target_accuracy: f64,
    pub holdout_fraction: f64,
    pub rng_seed: u64,
    /// Holdout accuracy is measured every this many batches.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Early stopping is disabled before this many batches.
    #[serde(default)]
    pub min_batches: usize,
}

fn default_eval_every() -> usize {
    5
}

pub const ALPHA_FINE: f64 = 0.005;
pub const ALPHA_FULL: f64 = 0.05;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: ALPHA_FULL,
            batch_size: 32,
            max_batches: 1500,
            target_accuracy: 0.99,
            holdout_fraction: 0.2,
            rng_seed: 0,
            eval_every: default_eval_every(),
            min_batches: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        if self.min_batches > self.max_batches {
            return Err(Error::InvalidConfig("min_batches exceeds max_batches".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "batch size and eval cadence must be positive".into(),
            ));
        }
        if !(self.target_accuracy > 0.5 && self.target_accuracy <= 1.0) {
            return Err(Error::InvalidConfig("target accuracy must lie in (0.5, 1]".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidConfig("holdout fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub final_accuracy: f64,
    pub batches_used: usize,
    /// Frames consumed by gradient steps.
    pub examples_seen: usize,
}

/// Supplies training batches. `None` ends training early.
pub trait BatchSource {
    fn next_batch(&mut self, size: usize) -> Option<Vec<LabeledFrame>>;
}

/// Uniform sampling without replacement, reshuffled every epoch.
pub struct EpochSampler<'a> {
    entries: &'a [LabeledFrame],
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> EpochSampler<'a> {
    pub fn new(entries: &'a [LabeledFrame], seed: u64) -> Self {
        let mut s = Self {
            entries,
            order: (0..entries.len()).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }
}

impl BatchSource for EpochSampler<'_> {
    fn next_batch(&mut self, size: usize) -> Option<Vec<LabeledFrame>> {
        if self.entries.is_empty() {
            return None;
        }
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size.min(self.entries.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            batch.push(self.entries[self.order[self.pos]].clone());
            self.pos += 1;
        }
        Some(batch)
    }
}

/// Holdout accuracy and mean cross-entropy.
fn evaluate(params: &ModelParams, frames: &[LabeledFrame], exec: Exec) -> Result<(f64, f64)> {
    if frames.is_empty() {
        return Ok((0.0, 0.0));
    }
    let outs = exec.map(frames, |e| {
        forward(params, &e.frame).map(|o| {
            let p = o.probs[e.label.index()].max(f64::MIN_POSITIVE);
            (label_from_probs(o.probs) == e.label, -p.ln())
        })
    });
    let (mut correct, mut loss) = (0usize, 0.0);
    for o in outs {
        let (hit, l) = o?;
        correct += hit as usize;
        loss += l;
    }
    let n = frames.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

pub fn accuracy(params: &ModelParams, frames: &[LabeledFrame], exec: Exec) -> Result<f64> {
    if frames.is_empty() {
        return Ok(0.0);
    }
    let hits = exec.map(frames, |e| predict(params, &e.frame).map(|p| p == e.label));
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / frames.len() as f64)
}

/// Shuffles `entries` with `seed` and splits off a holdout share; both
/// parts keep at least one entry when there are two or more.
pub fn split_holdout(entries: &[LabeledFrame], fraction: f64, seed: u64) -> (Vec<LabeledFrame>, Vec<LabeledFrame>) {
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0001));
    let mut h = (entries.len() as f64 * fraction).round() as usize;
    if entries.len() >= 2 {
        h = h.clamp(1, entries.len() - 1);
    }
    let holdout = idx[..h].iter().map(|&i| entries[i].clone()).collect();
    let train = idx[h..].iter().map(|&i| entries[i].clone()).collect();
    (train, holdout)
}

/// Mini-batch SGD until the holdout accuracy reaches the target or the
/// batch budget runs out. Returns the best-holdout snapshot.
pub fn train(params: &ModelParams, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !dataset.has_both_classes() {
        return Err(Error::SingleClassDataset);
    }
    let entries = dataset.to_vec();
    let (train_set, holdout) = split_holdout(&entries, cfg.holdout_fraction, cfg.rng_seed);
    let mut sampler = EpochSampler::new(&train_set, cfg.rng_seed);
    fit(params, &mut sampler, &holdout, cfg, Exec::default())
}

pub fn fit<S: BatchSource + ?Sized>(
    params: &ModelParams,
    source: &mut S,
    holdout: &[LabeledFrame],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut current = params.clone();
    let (mut best_acc, mut best_loss) = evaluate(&current, holdout, exec)?;
    let mut best = current.clone();
    let mut batches = 0;
    let mut examples = 0;
    if best_acc >= cfg.target_accuracy && cfg.min_batches == 0 {
        return Ok(TrainOutcome {
            params: best,
            final_accuracy: best_acc,
            batches_used: 0,
            examples_seen: 0,
        });
    }
    while batches < cfg.max_batches {
        let Some(batch) = source.next_batch(cfg.batch_size) else {
            break;
        };
        if batch.is_empty() {
            break;
        }
        let lg = loss_and_grad_with(&current, &batch, exec)?;
        current = sgd_step(&current, &lg.grad, cfg.alpha)?;
        batches += 1;
        examples += batch.len();
        if batches % cfg.eval_every == 0 || batches == cfg.max_batches {
            let (acc, loss) = evaluate(&current, holdout, exec)?;
            // Accuracy saturates on small holdouts; the loss breaks ties.
            if acc > best_acc || (acc == best_acc && loss < best_loss) {
                best_acc = acc;
                best_loss = loss;
                best = current.clone();
            }
            if acc >= cfg.target_accuracy && batches >= cfg.min_batches {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        final_accuracy: best_acc,
        batches_used: batches,
        examples_seen: examples,
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub input_norm: InputNorm,
}

impl ModelParams {
    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.values.clone(),
            input_norm: self.norm.clone(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Self::from_values(ck.config, ck.params)?.with_input_norm(ck.input_norm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
