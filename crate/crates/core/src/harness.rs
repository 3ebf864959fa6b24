//! Experiment runner.
//!
//! A session starts with a bootstrap training sequence that produces the
//! initial model, then the sender transmits data packets in fixed slots. In
//! closed-loop mode the receiver adapts: it fine-tunes on CRC-passing
//! packets and, when the PER trigger fires, requests a training sequence over
//! a control channel with latency and retrains from scratch. Baselines replay
//! the recorded trace, so every decoder sees the same sample stream.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    fine_tune, train_from_active, training_cost_us, AdaptationState, ControlMessage, ControlRecord, FineTuneConfig,
    FullTrainConfig, InterruptClock, Mode, PerConfig, PerMonitor, DEFAULT_CONTROL_LATENCY_US, MAX_SEQUENCE_RETRIES,
};
use crate::channel::{
    preset, ChannelGenerator, ChannelScenario, ModulationConfig, ScenarioFile, ScheduleEntry, WindowKind,
};
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, ModelParams, TrainConfig, ALPHA_FULL};
use crate::par::Exec;
use crate::pipeline::{harvest_passive, DecodeResult, Receiver, SymbolDecoder, VarianceThresholdDecoder};
use crate::preamble::{
    build_training_schedule, correlation_profile, extract_active_dataset, locate_in_chips, ChipClassifier,
    PreambleConfig, TrainingSequenceSpec, BARKER_LEN,
};
use crate::trace::Trace;
use crate::types::{energy_variance, Frame, LabeledDataset, Packet, SymbolLabel, PACKET_SYMBOLS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    Adaptive,
    FrozenModel,
    VarianceThreshold,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 3] = [
        DecoderKind::Adaptive,
        DecoderKind::FrozenModel,
        DecoderKind::VarianceThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Adaptive => "adaptive",
            DecoderKind::FrozenModel => "frozen-model",
            DecoderKind::VarianceThreshold => "variance-threshold",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecoderKind::ALL.into_iter().find(|d| d.name() == s).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown decoder '{s}' (adaptive, frozen-model, variance-threshold)"
            ))
        })
    }
}

/// A preset name or an inline scenario table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioChoice {
    Preset(String),
    Inline(ScenarioFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Defaults to the standard architecture at the scenario's width.
    pub model: Option<ModelConfig>,
    pub bootstrap_t_g_us: i64,
    pub training_t_g_us: i64,
    pub preamble: PreambleConfig,
    pub per: PerConfig,
    pub fine_tune: FineTuneConfig,
    pub full_train: FullTrainConfig,
    pub control_latency_us: i64,
    /// Idle symbol windows before each data packet.
    pub packet_gap_windows: usize,
    /// Simulated training time per example pushed through backprop.
    pub train_cost_per_example_us: f64,
    pub passive_capacity: usize,
    /// A packet slot with no decoded packet for this many slot lengths counts
    /// as a failure.
    pub missed_packet_timeout_slots: f64,
    pub rolling_window_us: i64,
    pub rolling_step_us: i64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            model: None,
            bootstrap_t_g_us: 1_000_000,
            // A block shorter than a motion period lets the two classes
            // differ by baseline phase alone.
            training_t_g_us: 1_000_000,
            preamble: PreambleConfig::default(),
            per: PerConfig::default(),
            fine_tune: FineTuneConfig::default(),
            full_train: FullTrainConfig {
                train: TrainConfig {
                    alpha: ALPHA_FULL,
                    // Holdout accuracy saturates long before the logits have
                    // any margin; fine tuning then tips frames over.
                    min_batches: 300,
                    ..TrainConfig::default()
                },
                ..FullTrainConfig::default()
            },
            control_latency_us: DEFAULT_CONTROL_LATENCY_US,
            packet_gap_windows: 12,
            train_cost_per_example_us: 30.0,
            passive_capacity: crate::types::DEFAULT_PASSIVE_CAPACITY,
            missed_packet_timeout_slots: 1.5,
            rolling_window_us: 5_000_000,
            rolling_step_us: 1_000_000,
        }
    }
}

impl SessionConfig {
    fn sequence_spec(&self, t_g_us: i64, t_s_us: i64) -> TrainingSequenceSpec {
        TrainingSequenceSpec {
            t_g_us,
            t_s_us,
            t_p_us: self.preamble.t_p_us,
            ..TrainingSequenceSpec::default()
        }
    }

    pub fn validate(&self, modulation: &ModulationConfig) -> Result<()> {
        self.preamble.validate()?;
        let t_s = modulation.t_s_us;
        self.sequence_spec(self.bootstrap_t_g_us, t_s).validate()?;
        self.sequence_spec(self.training_t_g_us, t_s).validate()?;
        if self.preamble.t_p_us % t_s != 0 {
            return Err(Error::InvalidConfig("T_p must be a multiple of T_s".into()));
        }
        if self.control_latency_us < 0 || !(self.train_cost_per_example_us >= 0.0) {
            return Err(Error::InvalidConfig(
                "latency and training cost must be non-negative".into(),
            ));
        }
        if self.rolling_window_us <= 0 || self.rolling_step_us <= 0 {
            return Err(Error::InvalidConfig("rolling window and step must be positive".into()));
        }
        if !(self.missed_packet_timeout_slots > 1.0) {
            return Err(Error::InvalidConfig(
                "missed-packet timeout must exceed one slot".into(),
            ));
        }
        self.full_train.train.validate()?;
        PerMonitor::new(self.per.clone())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioChoice,
    pub decoder: DecoderKind,
    pub seed: u64,
    /// Length of preset scenarios; inline scenarios carry their own.
    pub duration_ms: u64,
    pub session: SessionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("four-phase", DecoderKind::Adaptive, 1, 60_000)
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str, decoder: DecoderKind, seed: u64, duration_ms: u64) -> Self {
        Self {
            scenario: ScenarioChoice::Preset(name.to_string()),
            decoder,
            seed,
            duration_ms,
            session: SessionConfig::default(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scenario_name(&self) -> String {
        match &self.scenario {
            ScenarioChoice::Preset(n) => n.clone(),
            ScenarioChoice::Inline(_) => "custom".into(),
        }
    }

    /// The concrete scenario; the experiment seed replaces any seed in an
    /// inline scenario.
    pub fn resolve(&self) -> Result<(ChannelScenario, ModulationConfig)> {
        match &self.scenario {
            ScenarioChoice::Preset(name) => preset(name, self.duration_ms, self.seed),
            ScenarioChoice::Inline(f) => {
                let mut sc = f.scenario.clone();
                sc.seed = self.seed;
                Ok((sc, f.modulation.clone()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (sc, m) = self.resolve()?;
        sc.validate()?;
        m.validate()?;
        self.session.validate(&m)
    }

    fn same_experiment(&self, other: &ExperimentConfig) -> bool {
        self.scenario == other.scenario
            && self.seed == other.seed
            && self.duration_ms == other.duration_ms
            && self.session == other.session
    }
}

/// One transmitted data packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentPacket {
    pub start_us: i64,
    pub packet: Packet,
}

/// One transmitted training sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentSequence {
    pub start_us: i64,
    pub payload_start_us: i64,
    pub t_g_us: i64,
}

/// A packet as decoded by the receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedPacket {
    pub start_us: i64,
    pub end_us: i64,
    pub symbols: Vec<SymbolLabel>,
    pub crc_pass: bool,
    pub snapshot_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum SessionEvent {
    Trigger {
        t_us: i64,
        oldest_failure_us: i64,
    },
    SequenceLocated {
        t_us: i64,
        payload_start_us: i64,
        attempt: u32,
    },
    SequenceMissed {
        t_us: i64,
        attempt: u32,
    },
    Published {
        t_us: i64,
        snapshot_id: u32,
        examples_seen: usize,
    },
    Aborted {
        t_us: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sending {
    Closed,
    Open,
}

#[derive(Debug, Clone)]
enum RxDecoder {
    Model(ModelParams),
    Variance(VarianceThresholdDecoder),
}

impl SymbolDecoder for RxDecoder {
    fn decode_frame(&self, frame: &Frame) -> Result<SymbolLabel> {
        match self {
            RxDecoder::Model(p) => p.decode_frame(frame),
            RxDecoder::Variance(v) => v.decode_frame(frame),
        }
    }

    fn min_samples(&self) -> usize {
        match self {
            RxDecoder::Model(p) => p.min_samples(),
            RxDecoder::Variance(v) => v.min_samples(),
        }
    }
}

struct Sender {
    rng: ChaCha8Rng,
    t_s_us: i64,
    gap_windows: usize,
    /// (delivered, attempt) requests not yet served.
    requests: Vec<(i64, u32)>,
    packets: Vec<SentPacket>,
    sequences: Vec<SentSequence>,
}

impl Sender {
    fn slot_us(&self) -> i64 {
        (self.gap_windows + PACKET_SYMBOLS) as i64 * self.t_s_us
    }

    /// The next block of windows starting at `t`, or None when it would
    /// not fit before `end`.
    fn next_block(
        &mut self,
        t: i64,
        end: i64,
        spec: &TrainingSequenceSpec,
        latency_us: i64,
        control: &mut Vec<ControlRecord>,
    ) -> Result<Option<Vec<ScheduleEntry>>> {
        if let Some(i) = self.requests.iter().position(|r| r.0 <= t) {
            if t + spec.duration_us() > end {
                return Ok(None);
            }
            self.requests.remove(i);
            control.push(ControlRecord {
                sent_us: t,
                delivered_us: t + latency_us,
                message: ControlMessage::TrainingSequenceGrant { sequence_start_us: t },
            });
            self.sequences.push(SentSequence {
                start_us: t,
                payload_start_us: t + spec.preamble_us(),
                t_g_us: spec.t_g_us,
            });
            return build_training_schedule(spec, t).map(Some);
        }
        if t + self.slot_us() > end {
            return Ok(None);
        }
        let start = t + self.gap_windows as i64 * self.t_s_us;
        let packet = Packet::new(self.rng.random());
        self.packets.push(SentPacket {
            start_us: start,
            packet,
        });
        Ok(Some(
            packet
                .to_symbols()
                .into_iter()
                .enumerate()
                .map(|(i, s)| ScheduleEntry {
                    t_start_us: start + i as i64 * self.t_s_us,
                    duration_us: self.t_s_us,
                    kind: WindowKind::Symbol(s),
                })
                .collect(),
        ))
    }
}

struct PendingTraining {
    trigger_us: i64,
    attempt: u32,
    request_us: i64,
    deadline_us: i64,
}

struct Controller {
    state: AdaptationState,
    monitor: PerMonitor,
    dp: LabeledDataset,
    rng: ChaCha8Rng,
    last_event_us: i64,
    pending: Option<PendingTraining>,
    publish: Option<(i64, ModelParams, usize)>,
    trainings: u64,
    fine_tune_steps: u64,
    harvested_frames: u64,
    harvested_failing: u64,
}

/// Everything the receiver side produced.
struct RxOutcome {
    decodes: Vec<DecodedPacket>,
    chips: Vec<i8>,
    clock: InterruptClock,
    events: Vec<SessionEvent>,
    fine_tune_steps: u64,
    harvested_frames: u64,
    harvested_failing: u64,
    requests: Vec<ControlRecord>,
    final_decoder: RxDecoder,
}

struct Rx<'a> {
    cfg: &'a SessionConfig,
    model: ModelConfig,
    t_s_us: i64,
    spec: TrainingSequenceSpec,
    slot_us: i64,
    receiver: Receiver,
    decoder: RxDecoder,
    snapshot_id: u32,
    frame_t: i64,
    sample_lo: usize,
    chip_t: i64,
    classifier: ChipClassifier,
    chip_variances_seen: usize,
    chips: Vec<i8>,
    ctl: Option<Controller>,
    decodes: Vec<DecodedPacket>,
    events: Vec<SessionEvent>,
    requests: Vec<ControlRecord>,
    seed: u64,
    exec: Exec,
}

impl<'a> Rx<'a> {
    fn chip_t0(&self) -> i64 {
        0
    }

    /// Feeds chips for every full T_p window ending by `t`.
    fn advance_chips(&mut self, trace: &Trace, t: i64) {
        let t_p = self.cfg.preamble.t_p_us;
        while self.chip_t + t_p <= t {
            let w = trace.slice_time(self.chip_t, self.chip_t + t_p);
            let v = energy_variance(w);
            self.chips.extend(self.classifier.push(v));
            self.chip_variances_seen += 1;
            self.chip_t += t_p;
        }
    }

    fn advance(&mut self, trace: &Trace, t: i64) -> Result<()> {
        while self.frame_t + self.t_s_us <= t {
            let end = self.frame_t + self.t_s_us;
            self.advance_chips(trace, end);
            let lo = self.frame_t;
            self.sample_lo += trace.samples[self.sample_lo..].partition_point(|s| s.timestamp_us < lo);
            let hi = self.sample_lo + trace.samples[self.sample_lo..].partition_point(|s| s.timestamp_us < end);
            let samples = trace.samples[self.sample_lo..hi].to_vec();
            self.sample_lo = hi;
            if samples.is_empty() {
                self.receiver.reset();
                self.check_timeout(end);
                self.check_sequence(trace, end)?;
            } else {
                let frame = Frame::new(samples, self.frame_t, end)?;
                self.on_frame(trace, frame, end)?;
            }
            self.frame_t = end;
        }
        Ok(())
    }

    fn on_frame(&mut self, trace: &Trace, frame: Frame, now: i64) -> Result<()> {
        self.maybe_publish(frame.t_start_us());
        if let Some(r) = self.receiver.push(frame, &self.decoder)? {
            self.on_packet(r, now)?;
        }
        self.check_timeout(now);
        self.check_sequence(trace, now)
    }

    fn maybe_publish(&mut self, t: i64) {
        let Some(ctl) = self.ctl.as_mut() else { return };
        let ready = ctl.publish.as_ref().is_some_and(|p| p.0 <= t);
        if !ready || self.receiver.is_mid_packet() {
            return;
        }
        let (_, params, examples) = ctl.publish.take().expect("checked above");
        self.decoder = RxDecoder::Model(params);
        self.snapshot_id += 1;
        ctl.state.mode = Mode::Normal;
        ctl.monitor.reset();
        ctl.dp = LabeledDataset::new(crate::types::DatasetKind::Passive, self.cfg.passive_capacity)
            .expect("capacity validated");
        ctl.last_event_us = t;
        self.events.push(SessionEvent::Published {
            t_us: t,
            snapshot_id: self.snapshot_id,
            examples_seen: examples,
        });
    }

    fn on_packet(&mut self, r: DecodeResult, now: i64) -> Result<()> {
        self.decodes.push(DecodedPacket {
            start_us: r.start_us,
            end_us: now,
            symbols: r.symbols.clone(),
            crc_pass: r.crc_pass,
            snapshot_id: self.snapshot_id,
        });
        let Some(ctl) = self.ctl.as_mut() else { return Ok(()) };
        if ctl.state.mode != Mode::Normal {
            return Ok(());
        }
        ctl.last_event_us = now;
        if r.crc_pass {
            let added = harvest_passive(&r, &mut ctl.dp)?;
            ctl.harvested_frames += added as u64;
            if let RxDecoder::Model(params) = &self.decoder {
                ctl.state.mode = Mode::FineTuning;
                match fine_tune(params, &ctl.dp, &self.cfg.fine_tune, &mut ctl.rng, self.exec) {
                    Ok(p) => {
                        if p != *params {
                            ctl.fine_tune_steps += self.cfg.fine_tune.steps_per_packet as u64;
                            self.decoder = RxDecoder::Model(p);
                            self.snapshot_id += 1;
                        }
                    }
                    Err(Error::SingleClassDataset) => {}
                    Err(e) => return Err(e),
                }
                ctl.state.mode = Mode::Normal;
            }
        } else if harvest_passive(&r, &mut ctl.dp)? > 0 {
            ctl.harvested_failing += 1;
        }
        if ctl.monitor.update_at(r.start_us, r.crc_pass) {
            self.trigger(now);
        }
        Ok(())
    }

    fn check_timeout(&mut self, now: i64) {
        let Some(ctl) = self.ctl.as_mut() else { return };
        if ctl.state.mode != Mode::Normal {
            return;
        }
        let limit = (self.slot_us as f64 * self.cfg.missed_packet_timeout_slots) as i64;
        if now - ctl.last_event_us > limit {
            ctl.last_event_us += self.slot_us;
            let expected_start = ctl.last_event_us - PACKET_SYMBOLS as i64 * self.t_s_us;
            if ctl.monitor.update_at(expected_start, false) {
                self.trigger(now);
            }
        }
    }

    fn deadline(&self, request_us: i64) -> i64 {
        request_us
            + self.cfg.control_latency_us
            + self.slot_us
            + self.spec.duration_us()
            // Acceptance waits one Barker length past the tail.
            + (BARKER_LEN as i64 + 4) * self.cfg.preamble.t_p_us
    }

    fn request(&mut self, now: i64, attempt: u32) {
        self.requests.push(ControlRecord {
            sent_us: now,
            delivered_us: now + self.cfg.control_latency_us,
            message: ControlMessage::TrainingSequenceRequest { attempt },
        });
    }

    fn trigger(&mut self, now: i64) {
        let deadline = self.deadline(now);
        let ctl = self.ctl.as_mut().expect("trigger needs a controller");
        let oldest = ctl.monitor.oldest_failure_us().unwrap_or(now).min(now);
        ctl.state.clock.add_failure(now - oldest);
        ctl.state.mode = Mode::FullTraining;
        ctl.pending = Some(PendingTraining {
            trigger_us: now,
            attempt: 1,
            request_us: now,
            deadline_us: deadline,
        });
        self.events.push(SessionEvent::Trigger {
            t_us: now,
            oldest_failure_us: oldest,
        });
        self.request(now, 1);
    }

    fn check_sequence(&mut self, trace: &Trace, now: i64) -> Result<()> {
        let Some(p) = self.ctl.as_ref().and_then(|c| c.pending.as_ref()) else {
            return Ok(());
        };
        let (trigger_us, attempt, request_us, deadline_us) = (p.trigger_us, p.attempt, p.request_us, p.deadline_us);
        let t_p = self.cfg.preamble.t_p_us;
        let from = ((request_us - self.chip_t0()) / t_p) as usize;
        if from < self.chips.len() {
            let g = (self.spec.t_g_us / t_p) as usize;
            let found =
                locate_in_chips(&self.chips[from..], &self.spec, self.cfg.preamble.corr_threshold).filter(|m| {
                    let seen = self.chips.len() - from;
                    let tail_end = m.start_window + 2 * g + BARKER_LEN;
                    // An unconfirmed hit may be a decoy ahead of the real sequence.
                    seen >= tail_end + BARKER_LEN && (m.tail_confirmed || seen >= tail_end + g)
                });
            if let Some(m) = found {
                let start_us = self.chip_t0() + (from + m.start_window) as i64 * t_p;
                return self.train_on_sequence(trace, start_us, trigger_us, attempt, now);
            }
        }
        if now < deadline_us {
            return Ok(());
        }
        self.events.push(SessionEvent::SequenceMissed { t_us: now, attempt });
        if attempt <= MAX_SEQUENCE_RETRIES {
            let deadline = self.deadline(now);
            let ctl = self.ctl.as_mut().expect("pending implies controller");
            ctl.pending = Some(PendingTraining {
                trigger_us,
                attempt: attempt + 1,
                request_us: now,
                deadline_us: deadline,
            });
            self.request(now, attempt + 1);
        } else {
            log::warn!("no training sequence after {attempt} attempts; keeping the stale model");
            let ctl = self.ctl.as_mut().expect("pending implies controller");
            ctl.state.clock.add_collect(now - trigger_us);
            ctl.pending = None;
            ctl.state.mode = Mode::Normal;
            ctl.monitor.reset();
            ctl.last_event_us = now;
            self.events.push(SessionEvent::Aborted { t_us: now });
        }
        Ok(())
    }

    fn train_on_sequence(
        &mut self,
        trace: &Trace,
        start_us: i64,
        trigger_us: i64,
        attempt: u32,
        now: i64,
    ) -> Result<()> {
        let active = extract_active_dataset(&trace.samples, &self.spec, start_us)?;
        let ctl = self.ctl.as_mut().expect("pending implies controller");
        ctl.trainings += 1;
        let k = ctl.trainings;
        let cfg = training_config(&self.cfg.full_train, self.seed, k);
        let wall = std::time::Instant::now();
        let outcome = train_from_active(&self.model, &active.to_vec(), &cfg, self.exec)?;
        log::info!(
            "full training {k}: holdout {:.3} after {} batches, {:?} wall-clock",
            outcome.final_accuracy,
            outcome.batches_used,
            wall.elapsed()
        );
        let cost = training_cost_us(&outcome, self.cfg.train_cost_per_example_us);
        ctl.state.clock.add_collect(now - trigger_us);
        ctl.state.clock.add_train(cost);
        ctl.pending = None;
        ctl.publish = Some((now + cost, outcome.params, outcome.examples_seen));
        self.events.push(SessionEvent::SequenceLocated {
            t_us: now,
            payload_start_us: start_us,
            attempt,
        });
        Ok(())
    }

    fn finish(self) -> RxOutcome {
        let (clock, fine_tune_steps, harvested_frames, harvested_failing) =
            self.ctl.as_ref().map_or((InterruptClock::default(), 0, 0, 0), |c| {
                (
                    c.state.clock,
                    c.fine_tune_steps,
                    c.harvested_frames,
                    c.harvested_failing,
                )
            });
        RxOutcome {
            decodes: self.decodes,
            chips: self.chips,
            clock,
            events: self.events,
            fine_tune_steps,
            harvested_frames,
            harvested_failing,
            requests: self.requests,
            final_decoder: self.decoder,
        }
    }
}

fn training_config(base: &FullTrainConfig, seed: u64, k: u64) -> FullTrainConfig {
    let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
    let mut cfg = base.clone();
    cfg.init_seed = s;
    cfg.train.rng_seed = s;
    cfg.augment.rng_seed = s;
    cfg
}

/// Initial model and threshold decoder, both trained on the bootstrap sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Bootstrap {
    pub params: ModelParams,
    pub variance: VarianceThresholdDecoder,
    pub holdout_accuracy: f64,
    pub data_start_us: i64,
}

/// Idle lead before the bootstrap sequence; lets the chip threshold warm up.
const LEAD_WINDOWS: i64 = 20;

fn bootstrap_layout(cfg: &SessionConfig, t_s_us: i64) -> (TrainingSequenceSpec, i64, i64) {
    let spec = cfg.sequence_spec(cfg.bootstrap_t_g_us, t_s_us);
    let lead = LEAD_WINDOWS * cfg.preamble.t_p_us;
    let data_start = lead + spec.duration_us() + 2 * cfg.preamble.t_p_us;
    (spec, lead, data_start)
}

fn run_bootstrap(trace: &Trace, cfg: &SessionConfig, model: &ModelConfig, t_s_us: i64, seed: u64) -> Result<Bootstrap> {
    let (spec, _, data_start) = bootstrap_layout(cfg, t_s_us);
    let t_p = cfg.preamble.t_p_us;
    let mut classifier = ChipClassifier::new(cfg.preamble.threshold.clone());
    let variances: Vec<f64> = (0..data_start / t_p)
        .map(|k| energy_variance(trace.slice_time(k * t_p, (k + 1) * t_p)))
        .collect();
    let chips = classifier.classify_all(&variances);
    let m =
        locate_in_chips(&chips, &spec, cfg.preamble.corr_threshold).ok_or(Error::PreambleNotFound { attempts: 1 })?;
    let start_us = m.start_window as i64 * t_p;
    let active = extract_active_dataset(&trace.samples, &spec, start_us)?;
    let entries = active.to_vec();
    let outcome = train_from_active(
        model,
        &entries,
        &training_config(&cfg.full_train, seed, 0),
        Exec::default(),
    )?;
    Ok(Bootstrap {
        params: outcome.params,
        variance: VarianceThresholdDecoder::fit(&entries)?,
        holdout_accuracy: outcome.final_accuracy,
        data_start_us: data_start,
    })
}

/// A recorded session: the sample stream plus what the sender transmitted.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub trace: Trace,
    pub packets: Vec<SentPacket>,
    pub sequences: Vec<SentSequence>,
    pub control: Vec<ControlRecord>,
    pub duration_us: i64,
    pub segment_starts_us: Vec<i64>,
}

/// Per-packet metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub t_us: i64,
    pub crc_pass: bool,
    pub symbol_errors: usize,
    pub snapshot_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingPoint {
    /// End of the window.
    pub t_us: i64,
    pub symbols: usize,
    pub errors: usize,
    pub ser: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptReport {
    pub t_collect_us: i64,
    pub t_train_us: i64,
    pub t_failure_us: i64,
    pub t_i_us: i64,
}

impl From<InterruptClock> for InterruptReport {
    fn from(c: InterruptClock) -> Self {
        Self {
            t_collect_us: c.t_collect_us,
            t_train_us: c.t_train_us,
            t_failure_us: c.t_failure_us,
            t_i_us: c.total_us(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub triggers_us: Vec<i64>,
    pub publishes_us: Vec<i64>,
    pub sequence_requests: usize,
    pub aborted_full_trainings: usize,
    pub fine_tune_steps: u64,
    pub harvested_frames: u64,
    pub harvested_from_failing_packets: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreambleReport {
    pub sequences_sent: usize,
    pub sequences_located: usize,
    pub accuracy: f64,
    pub scanned_positions: usize,
    pub false_alarms: usize,
    pub false_alarm_ratio: f64,
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub report_version: u32,
    pub decoder: DecoderKind,
    pub scenario: String,
    pub seed: u64,
    pub duration_us: i64,
    pub data_start_us: i64,
    pub segment_starts_us: Vec<i64>,
    pub bootstrap_holdout_accuracy: f64,
    pub packets_sent: usize,
    pub packets_decoded: usize,
    pub packets_crc_pass: usize,
    pub spurious_packets: usize,
    pub symbols_sent: usize,
    pub symbol_errors: usize,
    pub overall_ser: f64,
    pub throughput_bps: f64,
    pub rolling_window_us: i64,
    pub rolling_step_us: i64,
    pub interrupt: InterruptReport,
    pub adaptation: AdaptationReport,
    pub preamble: PreambleReport,
}

/// Full result of one decoder on one session.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub report: MetricsReport,
    pub packets: Vec<PacketRecord>,
    pub rolling: Vec<RollingPoint>,
    pub events: Vec<SessionEvent>,
    pub final_params: Option<ModelParams>,
}

/// Ground truth scoring of decoded packets against what was sent.
pub fn score_packets(sent: &[SentPacket], decodes: &[DecodedPacket]) -> (Vec<PacketRecord>, usize, usize) {
    let mut records = Vec::with_capacity(sent.len());
    let mut matched = 0;
    let mut di = 0;
    let mut snapshot = 0;
    for s in sent {
        while di < decodes.len() && decodes[di].start_us < s.start_us {
            snapshot = decodes[di].snapshot_id;
            di += 1;
        }
        let truth = s.packet.to_symbols();
        match decodes.get(di).filter(|d| d.start_us == s.start_us) {
            Some(d) => {
                matched += 1;
                snapshot = d.snapshot_id;
                records.push(PacketRecord {
                    t_us: s.start_us,
                    crc_pass: d.crc_pass,
                    symbol_errors: truth.iter().zip(&d.symbols).filter(|(a, b)| a != b).count(),
                    snapshot_id: d.snapshot_id,
                });
                di += 1;
            }
            None => records.push(PacketRecord {
                t_us: s.start_us,
                crc_pass: false,
                symbol_errors: PACKET_SYMBOLS,
                snapshot_id: snapshot,
            }),
        }
    }
    let spurious = decodes.len() - matched;
    (records, matched, spurious)
}

/// SER over packets starting in `(t - window, t]`, every `step`.
pub fn rolling_ser(
    records: &[PacketRecord],
    from_us: i64,
    to_us: i64,
    window_us: i64,
    step_us: i64,
) -> Vec<RollingPoint> {
    let mut out = Vec::new();
    let mut t = from_us + window_us;
    while t <= to_us {
        let lo = records.partition_point(|r| r.t_us <= t - window_us);
        let hi = records.partition_point(|r| r.t_us <= t);
        let n = hi - lo;
        if n > 0 {
            let errors: usize = records[lo..hi].iter().map(|r| r.symbol_errors).sum();
            let symbols = n * PACKET_SYMBOLS;
            out.push(RollingPoint {
                t_us: t,
                symbols,
                errors,
                ser: errors as f64 / symbols as f64,
            });
        }
        t += step_us;
    }
    out
}

fn preamble_report(chips: &[i8], sequences: &[SentSequence], cfg: &SessionConfig, t_s_us: i64) -> PreambleReport {
    let t_p = cfg.preamble.t_p_us;
    let code = crate::preamble::BarkerCode::default();
    let profile = correlation_profile(chips, &code);
    let mut located = 0;
    let mut busy: Vec<(i64, i64)> = Vec::new();
    for s in sequences {
        let spec = cfg.sequence_spec(s.t_g_us, t_s_us);
        let lo = (s.start_us / t_p - 2).max(0) as usize;
        let hi = (((s.start_us + spec.duration_us()) / t_p + 2) as usize).min(chips.len());
        if lo < hi {
            if let Some(m) = locate_in_chips(&chips[lo..hi], &spec, cfg.preamble.corr_threshold) {
                located += ((lo + m.start_window) as i64 * t_p == s.payload_start_us) as usize;
            }
        }
        busy.push((s.start_us, s.start_us + spec.preamble_us()));
        let tail = s.payload_start_us + 2 * s.t_g_us;
        busy.push((tail, tail + spec.preamble_us()));
    }
    let mut scanned = 0;
    let mut false_alarms = 0;
    for (w, &c) in profile.iter().enumerate() {
        let a = w as i64 * t_p;
        let b = a + BARKER_LEN as i64 * t_p;
        if busy.iter().any(|&(s, e)| a < e && s < b) {
            continue;
        }
        scanned += 1;
        false_alarms += (c >= cfg.preamble.corr_threshold) as usize;
    }
    PreambleReport {
        sequences_sent: sequences.len(),
        sequences_located: located,
        accuracy: if sequences.is_empty() {
            0.0
        } else {
            located as f64 / sequences.len() as f64
        },
        scanned_positions: scanned,
        false_alarms,
        false_alarm_ratio: if scanned == 0 {
            0.0
        } else {
            false_alarms as f64 / scanned as f64
        },
    }
}

fn model_config(cfg: &SessionConfig, scenario: &ChannelScenario) -> Result<ModelConfig> {
    let m = cfg
        .model
        .clone()
        .unwrap_or_else(|| ModelConfig::with_input_dim(scenario.subcarriers));
    m.validate()?;
    if m.input_dim != scenario.subcarriers {
        return Err(Error::InvalidConfig(format!(
            "model expects {} subcarriers, scenario has {}",
            m.input_dim, scenario.subcarriers
        )));
    }
    Ok(m)
}

fn new_rx<'a>(
    cfg: &'a SessionConfig,
    model: ModelConfig,
    t_s_us: i64,
    boot: &Bootstrap,
    decoder: DecoderKind,
    seed: u64,
) -> Rx<'a> {
    let rx_decoder = match decoder {
        DecoderKind::VarianceThreshold => RxDecoder::Variance(boot.variance),
        _ => RxDecoder::Model(boot.params.clone()),
    };
    let ctl = (decoder == DecoderKind::Adaptive).then(|| Controller {
        state: AdaptationState::default(),
        monitor: PerMonitor::new(cfg.per.clone()).expect("validated"),
        dp: LabeledDataset::new(crate::types::DatasetKind::Passive, cfg.passive_capacity.max(1))
            .expect("positive capacity"),
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F1E5),
        last_event_us: boot.data_start_us,
        pending: None,
        publish: None,
        trainings: 0,
        fine_tune_steps: 0,
        harvested_frames: 0,
        harvested_failing: 0,
    });
    Rx {
        cfg,
        spec: cfg.sequence_spec(cfg.training_t_g_us, t_s_us),
        slot_us: (cfg.packet_gap_windows + PACKET_SYMBOLS) as i64 * t_s_us,
        model,
        t_s_us,
        receiver: Receiver::new(),
        decoder: rx_decoder,
        snapshot_id: 0,
        frame_t: boot.data_start_us,
        sample_lo: 0,
        chip_t: 0,
        classifier: ChipClassifier::new(cfg.preamble.threshold.clone()),
        chip_variances_seen: 0,
        chips: Vec::new(),
        ctl,
        decodes: Vec::new(),
        events: Vec::new(),
        requests: Vec::new(),
        seed,
        exec: Exec::default(),
    }
}

/// Generates a session. With `adaptive` the sender answers the receiver's
/// training-sequence requests; otherwise it only sends data.
fn simulate(cfg: &ExperimentConfig, closed: Sending) -> Result<(SessionTrace, Bootstrap, Option<RxOutcome>)> {
    cfg.validate()?;
    let (scenario, modulation) = cfg.resolve()?;
    let s = &cfg.session;
    let model = model_config(s, &scenario)?;
    let t_s = modulation.t_s_us;
    let mut gen = ChannelGenerator::new(scenario.clone(), modulation)?;
    let end = gen.duration_us();
    let mut trace = Trace::new();
    let (boot_spec, lead, data_start) = bootstrap_layout(s, t_s);
    if data_start >= end {
        return Err(Error::InvalidConfig(
            "scenario too short for the bootstrap sequence".into(),
        ));
    }
    let mut sender = Sender {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xDA7A),
        t_s_us: t_s,
        gap_windows: s.packet_gap_windows,
        requests: Vec::new(),
        packets: Vec::new(),
        sequences: vec![SentSequence {
            start_us: lead,
            payload_start_us: lead + boot_spec.preamble_us(),
            t_g_us: boot_spec.t_g_us,
        }],
    };
    for e in build_training_schedule(&boot_spec, lead)? {
        gen.emit(&e, &mut trace)?;
    }
    gen.fill_idle_until(data_start, &mut trace)?;
    let boot = run_bootstrap(&trace, s, &model, t_s, cfg.seed)?;

    let mut rx =
        (closed == Sending::Closed).then(|| new_rx(s, model.clone(), t_s, &boot, DecoderKind::Adaptive, cfg.seed));
    let spec = s.sequence_spec(s.training_t_g_us, t_s);
    let mut control = Vec::new();
    let mut t = data_start;
    loop {
        if let Some(rx) = rx.as_mut() {
            for r in rx.requests.iter().skip(control_requests(&control)) {
                sender.requests.push((r.delivered_us, request_attempt(r)));
            }
            let fresh: Vec<_> = rx.requests.iter().skip(control_requests(&control)).copied().collect();
            control.extend(fresh);
        }
        let Some(block) = sender.next_block(t, end, &spec, s.control_latency_us, &mut control)? else {
            break;
        };
        for e in &block {
            gen.emit(e, &mut trace)?;
        }
        t = block.last().map_or(t, |e| e.t_end_us());
        if let Some(rx) = rx.as_mut() {
            rx.advance(&trace, t)?;
        }
    }
    gen.fill_idle_until(end, &mut trace)?;
    if let Some(rx) = rx.as_mut() {
        rx.advance(&trace, end)?;
        rx.advance_chips(&trace, end);
    }
    control.sort_by_key(|c| {
        (
            c.sent_us,
            matches!(c.message, ControlMessage::TrainingSequenceGrant { .. }),
        )
    });
    let session = SessionTrace {
        trace,
        packets: sender.packets,
        sequences: sender.sequences,
        control,
        duration_us: end,
        segment_starts_us: scenario.segment_starts_us(),
    };
    Ok((session, boot, rx.map(Rx::finish)))
}

fn control_requests(control: &[ControlRecord]) -> usize {
    control
        .iter()
        .filter(|c| matches!(c.message, ControlMessage::TrainingSequenceRequest { .. }))
        .count()
}

fn request_attempt(r: &ControlRecord) -> u32 {
    match r.message {
        ControlMessage::TrainingSequenceRequest { attempt } => attempt,
        ControlMessage::TrainingSequenceGrant { .. } => 0,
    }
}

/// Runs a fixed decoder over a recorded session.
fn replay(cfg: &ExperimentConfig, session: &SessionTrace, decoder: DecoderKind) -> Result<(Bootstrap, RxOutcome)> {
    let (scenario, modulation) = cfg.resolve()?;
    let s = &cfg.session;
    let model = model_config(s, &scenario)?;
    let t_s = modulation.t_s_us;
    let boot = run_bootstrap(&session.trace, s, &model, t_s, cfg.seed)?;
    let mut rx = new_rx(s, model, t_s, &boot, decoder, cfg.seed);
    rx.ctl = None;
    rx.advance(&session.trace, session.duration_us)?;
    rx.advance_chips(&session.trace, session.duration_us);
    Ok((boot, rx.finish()))
}

fn assemble(
    cfg: &ExperimentConfig,
    decoder: DecoderKind,
    session: &SessionTrace,
    boot: &Bootstrap,
    rx: RxOutcome,
    t_s_us: i64,
) -> RunResult {
    let s = &cfg.session;
    let (packets, matched, spurious) = score_packets(&session.packets, &rx.decodes);
    let symbols_sent = packets.len() * PACKET_SYMBOLS;
    let symbol_errors: usize = packets.iter().map(|p| p.symbol_errors).sum();
    let delivered = packets.iter().filter(|r| r.crc_pass && r.symbol_errors == 0).count();
    let elapsed_s = (session.duration_us - boot.data_start_us) as f64 * 1e-6;
    let rolling = rolling_ser(
        &packets,
        boot.data_start_us,
        session.duration_us,
        s.rolling_window_us,
        s.rolling_step_us,
    );
    let triggers_us = rx
        .events
        .iter()
        .filter_map(|e| match e {
            SessionEvent::Trigger { t_us, .. } => Some(*t_us),
            _ => None,
        })
        .collect();
    let publishes_us = rx
        .events
        .iter()
        .filter_map(|e| match e {
            SessionEvent::Published { t_us, .. } => Some(*t_us),
            _ => None,
        })
        .collect();
    let aborted = rx
        .events
        .iter()
        .filter(|e| matches!(e, SessionEvent::Aborted { .. }))
        .count();
    let report = MetricsReport {
        report_version: REPORT_VERSION,
        decoder,
        scenario: cfg.scenario_name(),
        seed: cfg.seed,
        duration_us: session.duration_us,
        data_start_us: boot.data_start_us,
        segment_starts_us: session.segment_starts_us.clone(),
        bootstrap_holdout_accuracy: boot.holdout_accuracy,
        packets_sent: packets.len(),
        packets_decoded: matched,
        packets_crc_pass: packets.iter().filter(|p| p.crc_pass).count(),
        spurious_packets: spurious,
        symbols_sent,
        symbol_errors,
        overall_ser: if symbols_sent == 0 {
            0.0
        } else {
            symbol_errors as f64 / symbols_sent as f64
        },
        throughput_bps: if elapsed_s > 0.0 {
            (delivered * crate::types::PAYLOAD_BITS) as f64 / elapsed_s
        } else {
            0.0
        },
        rolling_window_us: s.rolling_window_us,
        rolling_step_us: s.rolling_step_us,
        interrupt: rx.clock.into(),
        adaptation: AdaptationReport {
            triggers_us,
            publishes_us,
            sequence_requests: rx.requests.len(),
            aborted_full_trainings: aborted,
            fine_tune_steps: rx.fine_tune_steps,
            harvested_frames: rx.harvested_frames,
            harvested_from_failing_packets: rx.harvested_failing,
        },
        preamble: preamble_report(&rx.chips, &session.sequences, s, t_s_us),
    };
    let final_params = match rx.final_decoder {
        RxDecoder::Model(p) => Some(p),
        RxDecoder::Variance(_) => None,
    };
    RunResult {
        report,
        packets,
        rolling,
        events: rx.events,
        final_params,
    }
}

/// The session every decoder of an experiment is scored on: closed loop
/// when an adaptive decoder takes part, open loop otherwise.
pub fn reference_session(cfg: &ExperimentConfig, with_adaptive: bool) -> Result<SessionTrace> {
    let mode = if with_adaptive { Sending::Closed } else { Sending::Open };
    Ok(simulate(cfg, mode)?.0)
}

/// Runs one decoder end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(SessionTrace, RunResult)> {
    let mut out = compare(std::slice::from_ref(cfg))?;
    let run = out.runs.pop().expect("one config gives one run");
    Ok((out.session, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub decoder: DecoderKind,
    pub overall_ser: f64,
    pub throughput_bps: f64,
    pub packets_crc_pass: usize,
    pub t_i_us: i64,
}

/// `relative_reduction` is `(ser(versus) - ser(decoder)) / ser(versus)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDelta {
    pub decoder: DecoderKind,
    pub versus: DecoderKind,
    pub ser_delta: f64,
    pub relative_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub pairs: Vec<PairwiseDelta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub session: SessionTrace,
    pub runs: Vec<RunResult>,
    pub table: ComparisonTable,
}

/// Scores several decoders on one paired session.
pub fn compare(cfgs: &[ExperimentConfig]) -> Result<Comparison> {
    let first = cfgs
        .first()
        .ok_or_else(|| Error::InvalidConfig("no decoders to compare".into()))?;
    for c in cfgs {
        if !first.same_experiment(c) {
            return Err(Error::MismatchedScenarios(format!(
                "{} (seed {}) vs {} (seed {})",
                first.scenario_name(),
                first.seed,
                c.scenario_name(),
                c.seed
            )));
        }
    }
    let mut seen = std::collections::HashSet::new();
    if !cfgs.iter().all(|c| seen.insert(c.decoder)) {
        return Err(Error::InvalidConfig("each decoder may appear once".into()));
    }
    let with_adaptive = cfgs.iter().any(|c| c.decoder == DecoderKind::Adaptive);
    let mode = if with_adaptive { Sending::Closed } else { Sending::Open };
    let (session, boot, adaptive_rx) = simulate(first, mode)?;
    let (_, modulation) = first.resolve()?;
    let mut adaptive_rx = adaptive_rx;
    let mut runs = Vec::with_capacity(cfgs.len());
    for c in cfgs {
        let run = match c.decoder {
            DecoderKind::Adaptive => {
                let rx = adaptive_rx
                    .take()
                    .expect("closed-loop session ran the adaptive receiver");
                assemble(c, c.decoder, &session, &boot, rx, modulation.t_s_us)
            }
            d => {
                let (b, rx) = replay(c, &session, d)?;
                assemble(c, d, &session, &b, rx, modulation.t_s_us)
            }
        };
        runs.push(run);
    }
    let rows = runs
        .iter()
        .map(|r| ComparisonRow {
            decoder: r.report.decoder,
            overall_ser: r.report.overall_ser,
            throughput_bps: r.report.throughput_bps,
            packets_crc_pass: r.report.packets_crc_pass,
            t_i_us: r.report.interrupt.t_i_us,
        })
        .collect::<Vec<_>>();
    let mut pairs = Vec::new();
    for a in &rows {
        for b in &rows {
            if a.decoder != b.decoder {
                pairs.push(PairwiseDelta {
                    decoder: a.decoder,
                    versus: b.decoder,
                    ser_delta: a.overall_ser - b.overall_ser,
                    relative_reduction: (b.overall_ser > 0.0).then(|| (b.overall_ser - a.overall_ser) / b.overall_ser),
                });
            }
        }
    }
    Ok(Comparison {
        table: ComparisonTable {
            scenario: first.scenario_name(),
            seed: first.seed,
            rows,
            pairs,
        },
        session,
        runs,
    })
}

/// Seconds with microsecond precision, formatted exactly.
pub fn format_seconds(t_us: i64) -> String {
    let sign = if t_us < 0 { "-" } else { "" };
    let a = t_us.unsigned_abs();
    format!("{sign}{}.{:06}", a / 1_000_000, a % 1_000_000)
}

pub fn packets_csv(records: &[PacketRecord]) -> String {
    let mut s = String::from("t,crc_pass,symbol_errors,snapshot_id\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            format_seconds(r.t_us),
            r.crc_pass,
            r.symbol_errors,
            r.snapshot_id
        ));
    }
    s
}

pub fn parse_packets_csv(text: &str) -> Result<Vec<PacketRecord>> {
    let bad = |line: usize, msg: &str| Error::MalformedTrace {
        line,
        msg: msg.to_string(),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected 4 columns"));
        }
        let (secs, frac) = f[0].split_once('.').ok_or_else(|| bad(i + 1, "bad time"))?;
        let secs: i64 = secs.parse().map_err(|_| bad(i + 1, "bad time"))?;
        let frac: i64 = format!("{frac:0<6}")[..6].parse().map_err(|_| bad(i + 1, "bad time"))?;
        out.push(PacketRecord {
            t_us: secs * 1_000_000 + if secs < 0 || f[0].starts_with('-') { -frac } else { frac },
            crc_pass: f[1].parse().map_err(|_| bad(i + 1, "bad crc_pass"))?,
            symbol_errors: f[2].parse().map_err(|_| bad(i + 1, "bad symbol_errors"))?,
            snapshot_id: f[3].parse().map_err(|_| bad(i + 1, "bad snapshot_id"))?,
        });
    }
    Ok(out)
}

pub fn rolling_csv(points: &[RollingPoint]) -> String {
    let mut s = String::from("t,symbols,errors,ser\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            format_seconds(p.t_us),
            p.symbols,
            p.errors,
            p.ser
        ));
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn to_json_pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionMeta {
    duration_us: i64,
    segment_starts_us: Vec<i64>,
}

/// Writes the trace, control log and sender log of a session.
pub fn write_session(dir: &Path, session: &SessionTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = SessionMeta {
        duration_us: session.duration_us,
        segment_starts_us: session.segment_starts_us.clone(),
    };
    write_file(&dir.join("session.json"), &to_json_pretty(&meta)?)?;
    write_file(&dir.join("trace.jsonl"), &session.trace.to_jsonl_bytes())?;
    write_file(&dir.join("control.jsonl"), &jsonl(&session.control)?)?;
    write_file(&dir.join("sent_packets.jsonl"), &jsonl(&session.packets)?)?;
    write_file(&dir.join("sent_sequences.jsonl"), &jsonl(&session.sequences)?)?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedTrace {
                line: i + 1,
                msg: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

/// Loads a session written by [`write_session`].
pub fn read_session(dir: &Path) -> Result<SessionTrace> {
    let meta: SessionMeta = serde_json::from_slice(&fs::read(dir.join("session.json"))?)?;
    let trace = Trace::read_jsonl(std::io::BufReader::new(fs::File::open(dir.join("trace.jsonl"))?))?;
    Ok(SessionTrace {
        trace,
        packets: read_jsonl(&dir.join("sent_packets.jsonl"))?,
        sequences: read_jsonl(&dir.join("sent_sequences.jsonl"))?,
        control: read_jsonl(&dir.join("control.jsonl"))?,
        duration_us: meta.duration_us,
        segment_starts_us: meta.segment_starts_us,
    })
}

/// Scores a non-adaptive decoder on a recorded session.
pub fn replay_session(cfg: &ExperimentConfig, session: &SessionTrace) -> Result<RunResult> {
    if cfg.decoder == DecoderKind::Adaptive {
        return Err(Error::InvalidConfig(
            "the adaptive decoder requests training sequences and needs the live generator".into(),
        ));
    }
    cfg.validate()?;
    let (_, modulation) = cfg.resolve()?;
    let (boot, rx) = replay(cfg, session, cfg.decoder)?;
    Ok(assemble(cfg, cfg.decoder, session, &boot, rx, modulation.t_s_us))
}

/// Locates the bootstrap training sequence at the head of a trace and trains
/// a fresh model and threshold decoder on it.
pub fn train_on_trace(cfg: &ExperimentConfig, trace: &Trace) -> Result<Bootstrap> {
    cfg.validate()?;
    let (scenario, modulation) = cfg.resolve()?;
    let model = model_config(&cfg.session, &scenario)?;
    run_bootstrap(trace, &cfg.session, &model, modulation.t_s_us, cfg.seed)
}

/// Writes per-packet CSV, rolling SER CSV, events, summary JSON and the
/// final model checkpoint of one run.
pub fn write_run(dir: &Path, run: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_file(&dir.join("packets.csv"), packets_csv(&run.packets).as_bytes())?;
    write_file(&dir.join("rolling_ser.csv"), rolling_csv(&run.rolling).as_bytes())?;
    write_file(&dir.join("events.jsonl"), &jsonl(&run.events)?)?;
    write_file(&dir.join("summary.json"), &to_json_pretty(&run.report)?)?;
    if let Some(p) = &run.final_params {
        write_file(&dir.join("checkpoint.json"), p.to_checkpoint_json().as_bytes())?;
    }
    Ok(())
}

pub fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<()> {
    write_session(dir, &cmp.session)?;
    for run in &cmp.runs {
        write_run(&dir.join(run.report.decoder.name()), run)?;
    }
    write_file(&dir.join("comparison.json"), &to_json_pretty(&cmp.table)?)?;
    let mut csv = String::from("decoder,overall_ser,throughput_bps,packets_crc_pass,t_i_us\n");
    for r in &cmp.table.rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.decoder, r.overall_ser, r.throughput_bps, r.packets_crc_pass, r.t_i_us
        ));
    }
    write_file(&dir.join("comparison.csv"), csv.as_bytes())
}

/// Rebuilds the rolling SER CSV from a run directory's packet CSV and
/// renders a plain-text summary.
pub fn rerender_report(dir: &Path) -> Result<String> {
    let summary: MetricsReport = serde_json::from_slice(&fs::read(dir.join("summary.json"))?)?;
    let packets = parse_packets_csv(&fs::read_to_string(dir.join("packets.csv"))?)?;
    let rolling = rolling_ser(
        &packets,
        summary.data_start_us,
        summary.duration_us,
        summary.rolling_window_us,
        summary.rolling_step_us,
    );
    write_file(&dir.join("rolling_ser.csv"), rolling_csv(&rolling).as_bytes())?;
    Ok(render_summary(&summary))
}

pub fn render_summary(r: &MetricsReport) -> String {
    let i = &r.interrupt;
    format!(
        "decoder            {}\n\
         scenario           {} (seed {})\n\
         packets            {} sent, {} decoded, {} passed CRC, {} spurious\n\
         overall SER        {:.4}\n\
         throughput         {:.1} bit/s\n\
         interrupt time     T_I {} = collect {} + train {} + failure {} (s)\n\
         full trainings     {} triggered, {} published, {} aborted\n\
         preamble           {}/{} located, {} false alarms in {} positions\n",
        r.decoder,
        r.scenario,
        r.seed,
        r.packets_sent,
        r.packets_decoded,
        r.packets_crc_pass,
        r.spurious_packets,
        r.overall_ser,
        r.throughput_bps,
        format_seconds(i.t_i_us),
        format_seconds(i.t_collect_us),
        format_seconds(i.t_train_us),
        format_seconds(i.t_failure_us),
        r.adaptation.triggers_us.len(),
        r.adaptation.publishes_us.len(),
        r.adaptation.aborted_full_trainings,
        r.preamble.sequences_located,
        r.preamble.sequences_sent,
        r.preamble.false_alarms,
        r.preamble.scanned_positions,
    )
}
