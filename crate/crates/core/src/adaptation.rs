//! Online adaptation: PER monitoring, fine tuning on harvested frames, and
//! full retraining on an augmented training sequence.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    fit, init_params, loss_and_grad_with, sgd_step, split_holdout, EpochSampler, InputNorm, ModelConfig, ModelParams,
    TrainConfig, TrainOutcome, ALPHA_FINE, ALPHA_FULL,
};
use crate::par::Exec;
use crate::preamble::{extract_active_dataset, locate_training_sequence, PreambleConfig, TrainingSequenceSpec};
use crate::types::{DatasetKind, LabeledDataset, LabeledFrame, SampleVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerConfig {
    pub window_size: usize,
    pub trigger_threshold: f64,
    pub consecutive_required: usize,
}

impl Default for PerConfig {
    fn default() -> Self {
        Self {
            window_size: 20,
            trigger_threshold: 0.4,
            consecutive_required: 2,
        }
    }
}

/// Sliding-window packet error rate with an M-in-a-row trigger.
#[derive(Debug, Clone)]
pub struct PerMonitor {
    cfg: PerConfig,
    window: VecDeque<(i64, bool)>,
    failures: usize,
    streak: usize,
}

impl PerMonitor {
    pub fn new(cfg: PerConfig) -> Result<Self> {
        if cfg.window_size == 0 || cfg.consecutive_required == 0 {
            return Err(Error::InvalidConfig("PER window and M must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.trigger_threshold) {
            return Err(Error::InvalidConfig("PER threshold must lie in [0, 1)".into()));
        }
        Ok(Self {
            window: VecDeque::with_capacity(cfg.window_size),
            cfg,
            failures: 0,
            streak: 0,
        })
    }

    /// Failures over the window size, counting only packets seen so far.
    pub fn per(&self) -> f64 {
        self.failures as f64 / self.cfg.window_size as f64
    }

    pub fn failures_in_window(&self) -> usize {
        self.failures
    }

    /// Records one packet outcome; true when the trigger fires.
    pub fn update(&mut self, crc_pass: bool) -> bool {
        self.update_at(0, crc_pass)
    }

    /// As [`PerMonitor::update`], remembering when the packet was sent.
    pub fn update_at(&mut self, t_us: i64, crc_pass: bool) -> bool {
        if self.window.len() == self.cfg.window_size && !self.window.pop_front().is_none_or(|e| e.1) {
            self.failures -= 1;
        }
        self.window.push_back((t_us, crc_pass));
        if !crc_pass {
            self.failures += 1;
        }
        if self.per() > self.cfg.trigger_threshold {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.streak >= self.cfg.consecutive_required
    }

    /// Send time of the oldest failure still in the window.
    pub fn oldest_failure_us(&self) -> Option<i64> {
        self.window.iter().find(|e| !e.1).map(|e| e.0)
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.failures = 0;
        self.streak = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Normal,
    FineTuning,
    FullTraining,
}

/// Interrupt-time accumulators in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptClock {
    pub t_collect_us: i64,
    pub t_train_us: i64,
    pub t_failure_us: i64,
}

impl InterruptClock {
    pub fn add_collect(&mut self, us: i64) {
        self.t_collect_us += us.max(0);
    }

    pub fn add_train(&mut self, us: i64) {
        self.t_train_us += us.max(0);
    }

    pub fn add_failure(&mut self, us: i64) {
        self.t_failure_us += us.max(0);
    }

    pub fn total_us(&self) -> i64 {
        self.t_collect_us + self.t_train_us + self.t_failure_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationState {
    pub mode: Mode,
    pub clock: InterruptClock,
}

impl Default for AdaptationState {
    fn default() -> Self {
        Self {
            mode: Mode::Normal,
            clock: InterruptClock::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ControlMessage {
    TrainingSequenceRequest { attempt: u32 },
    TrainingSequenceGrant { sequence_start_us: i64 },
}

/// One message on the simulated control channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub sent_us: i64,
    pub delivered_us: i64,
    pub message: ControlMessage,
}

pub const DEFAULT_CONTROL_LATENCY_US: i64 = 50_000;
pub const MAX_SEQUENCE_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub multiplier: usize,
    pub dedupe: bool,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            multiplier: 20,
            dedupe: true,
            rng_seed: 0,
        }
    }
}

/// n! saturating at `cap`.
fn factorial_capped(n: usize, cap: usize) -> usize {
    let mut f: usize = 1;
    for k in 2..=n {
        f = f.saturating_mul(k);
        if f >= cap {
            return cap;
        }
    }
    f
}

/// Permuted copies of each seed frame, labels unchanged.
///
/// With dedupe, the identity and repeated orders are skipped, so a seed of
/// N samples yields at most N! - 1 copies.
pub fn augment(seeds: &[LabeledFrame], cfg: &AugmentConfig) -> Result<LabeledDataset> {
    if cfg.multiplier == 0 {
        return Err(Error::InvalidConfig("augmentation multiplier must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = Vec::with_capacity(seeds.len() * cfg.multiplier);
    for seed in seeds {
        let n = seed.frame.len();
        let identity: Vec<usize> = (0..n).collect();
        let count = if cfg.dedupe {
            cfg.multiplier.min(factorial_capped(n, cfg.multiplier + 1) - 1)
        } else {
            cfg.multiplier
        };
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        seen.insert(identity.clone());
        let mut emitted = 0;
        while emitted < count {
            let mut order = identity.clone();
            order.shuffle(&mut rng);
            if cfg.dedupe && !seen.insert(order.clone()) {
                continue;
            }
            out.push(LabeledFrame {
                frame: seed.frame.permuted(&order),
                label: seed.label,
            });
            emitted += 1;
        }
    }
    Ok(LabeledDataset::from_entries(DatasetKind::Active, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub alpha: f64,
    pub steps_per_packet: usize,
    pub batch_size: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            alpha: ALPHA_FINE,
            steps_per_packet: 4,
            batch_size: 32,
        }
    }
}

/// `steps_per_packet` SGD steps on batches drawn uniformly from D_p.
/// Leaves the parameters untouched while D_p holds fewer than one batch.
pub fn fine_tune<R: Rng + ?Sized>(
    params: &ModelParams,
    dp: &LabeledDataset,
    cfg: &FineTuneConfig,
    rng: &mut R,
    exec: Exec,
) -> Result<ModelParams> {
    if dp.len() < cfg.batch_size.max(1) {
        return Ok(params.clone());
    }
    if !dp.has_both_classes() {
        return Err(Error::SingleClassDataset);
    }
    let mut current = params.clone();
    for _ in 0..cfg.steps_per_packet {
        let batch: Vec<LabeledFrame> = (0..cfg.batch_size)
            .map(|_| dp.get(rng.random_range(0..dp.len())).expect("index in range").clone())
            .collect();
        let lg = loss_and_grad_with(&current, &batch, exec)?;
        current = sgd_step(&current, &lg.grad, cfg.alpha)?;
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullTrainConfig {
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Set false to train on the extracted frames alone.
    pub augmentation: bool,
    pub init_seed: u64,
    /// Standardize inputs with statistics of the training split.
    #[serde(default = "yes")]
    pub normalize_inputs: bool,
}

fn yes() -> bool {
    true
}

impl Default for FullTrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                alpha: ALPHA_FULL,
                ..TrainConfig::default()
            },
            augment: AugmentConfig::default(),
            augmentation: true,
            init_seed: 0,
            normalize_inputs: true,
        }
    }
}

/// Trains a fresh model on an active dataset. The holdout is split off
/// before augmentation so it never contains permutations of training seeds.
pub fn train_from_active(
    model: &ModelConfig,
    active: &[LabeledFrame],
    cfg: &FullTrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    let has = |bit: bool| active.iter().any(|e| e.label.bit() == bit);
    if !has(true) || !has(false) {
        return Err(Error::SingleClassDataset);
    }
    let (mut train, holdout) = split_holdout(active, cfg.train.holdout_fraction, cfg.train.rng_seed);
    let mut init = init_params(model, cfg.init_seed)?;
    if cfg.normalize_inputs {
        init = init.with_input_norm(InputNorm::fit(model.input_dim, train.iter().map(|e| &e.frame)))?;
    }
    if cfg.augmentation {
        let extra = augment(&train, &cfg.augment)?;
        train.extend(extra.iter().cloned());
    }
    let mut source = EpochSampler::new(&train, cfg.train.rng_seed);
    fit(&init, &mut source, &holdout, &cfg.train, exec)
}

/// A raw capture covering one requested training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub samples: Vec<SampleVector>,
    pub t0_us: i64,
    pub t_end_us: i64,
}

/// Something that answers a training-sequence request with a capture.
pub trait TrainingSequenceSource {
    /// `requested_us` is when the request leaves the receiver.
    fn request(&mut self, attempt: u32, requested_us: i64) -> Result<Capture>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullTrainReport {
    pub params: ModelParams,
    pub outcome: TrainOutcome,
    pub attempts: u32,
    pub active_frames: usize,
    /// From the first request to the end of the extracted payload.
    pub t_collect_us: i64,
    /// Simulated training time from the cost model.
    pub t_train_us: i64,
}

/// Simulated training time: a fixed cost per example pushed through backprop.
pub fn training_cost_us(outcome: &TrainOutcome, cost_per_example_us: f64) -> i64 {
    (outcome.examples_seen as f64 * cost_per_example_us).round() as i64
}

/// Request, locate, extract and retrain, retrying when no preamble is found.
#[allow(clippy::too_many_arguments)]
pub fn full_train<S: TrainingSequenceSource + ?Sized>(
    source: &mut S,
    requested_us: i64,
    model: &ModelConfig,
    spec: &TrainingSequenceSpec,
    preamble: &PreambleConfig,
    cfg: &FullTrainConfig,
    cost_per_example_us: f64,
    exec: Exec,
) -> Result<FullTrainReport> {
    let mut attempt = 0;
    let mut t = requested_us;
    loop {
        attempt += 1;
        let cap = source.request(attempt, t)?;
        let located = locate_training_sequence(&cap.samples, cap.t0_us, cap.t_end_us, spec, preamble)?;
        match located {
            Some(loc) => {
                let active = extract_active_dataset(&cap.samples, spec, loc.start_us)?;
                let outcome = train_from_active(model, &active.to_vec(), cfg, exec)?;
                return Ok(FullTrainReport {
                    params: outcome.params.clone(),
                    t_train_us: training_cost_us(&outcome, cost_per_example_us),
                    outcome,
                    attempts: attempt,
                    active_frames: active.len(),
                    t_collect_us: loc.start_us + 2 * spec.t_g_us - requested_us,
                });
            }
            None if attempt > MAX_SEQUENCE_RETRIES => {
                return Err(Error::PreambleNotFound { attempts: attempt });
            }
            None => t = cap.t_end_us,
        }
    }
}
