//! Seeded synthetic CSI/RSSI streams.
//!
//! Each subcarrier amplitude is a baseline random walk plus an optional
//! low-frequency sinusoid (body motion), additive white Gaussian noise, and
//! step jumps at segment boundaries. A foreign transmitter modulates the
//! stream: inside a symbol-1 window (or a +1 preamble chip) each sample is
//! independently perturbed with probability `impact_prob` by a random-sign
//! offset, the on/off keying the decoder has to recover.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Annotation, Trace, Truth};
use crate::types::{SampleVector, SymbolLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise {
    pub amplitude: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbruptJump {
    /// Per-subcarrier amplitude offsets applied when the segment starts.
    pub baseline_delta: Vec<f64>,
    /// New per-subcarrier gain of the transmitter's impact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact_gain: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSegment {
    pub duration_ms: u64,
    /// Random-walk scale in amplitude units per sqrt(second).
    pub baseline_drift_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_noise: Option<MotionNoise>,
    pub awgn_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abrupt_jump: Option<AbruptJump>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JitterModel {
    /// Per-window sample count drawn from Poisson(rate * window).
    #[default]
    PoissonCountPerWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScenario {
    pub segments: Vec<DynamicsSegment>,
    pub subcarriers: usize,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub sample_jitter: JitterModel,
    /// Floor on the per-window sample count; keeps every frame decodable by
    /// the widest filter.
    #[serde(default = "default_min_samples")]
    pub min_samples_per_window: usize,
    #[serde(default = "default_baseline_level")]
    pub baseline_level: f64,
    /// Initial per-subcarrier baselines are uniform in level +/- spread.
    #[serde(default = "default_baseline_spread")]
    pub baseline_spread: f64,
    pub seed: u64,
}

fn default_min_samples() -> usize {
    5
}
fn default_baseline_level() -> f64 {
    1.0
}
fn default_baseline_spread() -> f64 {
    0.2
}

impl ChannelScenario {
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidConfig("scenario needs at least one segment".into()));
        }
        if self.subcarriers == 0 {
            return Err(Error::InvalidConfig("subcarrier count must be >= 1".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if self.min_samples_per_window == 0 {
            return Err(Error::InvalidConfig("min samples per window must be >= 1".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.duration_ms == 0 {
                return Err(Error::InvalidConfig(format!("segment {i} has zero duration")));
            }
            if !(s.awgn_sigma >= 0.0) || !(s.baseline_drift_rate >= 0.0) {
                return Err(Error::InvalidConfig(format!("segment {i} has a negative scale")));
            }
            if let Some(m) = &s.motion_noise {
                if !(m.freq_hz > 0.0) || !(m.amplitude >= 0.0) {
                    return Err(Error::InvalidConfig(format!("segment {i} has invalid motion noise")));
                }
            }
            if let Some(j) = &s.abrupt_jump {
                let gain_len = j.impact_gain.as_ref().map_or(self.subcarriers, Vec::len);
                if j.baseline_delta.len() != self.subcarriers || gain_len != self.subcarriers {
                    return Err(Error::LengthMismatch {
                        expected: self.subcarriers,
                        got: if gain_len != self.subcarriers {
                            gain_len
                        } else {
                            j.baseline_delta.len()
                        },
                    });
                }
            }
        }
        Ok(())
    }

    pub fn duration_us(&self) -> i64 {
        self.segments.iter().map(|s| s.duration_ms as i64 * 1000).sum()
    }

    /// Start time of every segment.
    pub fn segment_starts_us(&self) -> Vec<i64> {
        let mut t = 0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration_ms as i64 * 1000;
                start
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationConfig {
    pub t_s_us: i64,
    pub impact_prob: f64,
    pub impact_magnitude: f64,
    /// Probability the sender emits a preamble chip inverted.
    #[serde(default)]
    pub chip_flip_prob: f64,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            t_s_us: 4000,
            impact_prob: 0.8,
            impact_magnitude: 0.15,
            chip_flip_prob: 0.0,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_s_us <= 0 {
            return Err(Error::InvalidConfig("T_s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.impact_prob) || !(0.0..=1.0).contains(&self.chip_flip_prob) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if !(self.impact_magnitude >= 0.0) {
            return Err(Error::InvalidConfig("impact magnitude must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    Symbol(SymbolLabel),
    Idle,
    /// Preamble chip, +1 (transmitter on) or -1 (off).
    Chip(i8),
}

impl WindowKind {
    pub fn truth(self) -> Truth {
        match self {
            WindowKind::Symbol(SymbolLabel::Zero) => Truth::Sym0,
            WindowKind::Symbol(SymbolLabel::One) => Truth::Sym1,
            WindowKind::Idle => Truth::Idle,
            WindowKind::Chip(_) => Truth::Preamble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub t_start_us: i64,
    pub duration_us: i64,
    pub kind: WindowKind,
}

impl ScheduleEntry {
    pub fn t_end_us(&self) -> i64 {
        self.t_start_us + self.duration_us
    }
}

/// Per-window sample count: Poisson(rate * window), at least 1.
pub fn sample_count_for_window<R: Rng + ?Sized>(rate_hz: f64, t_s_us: i64, rng: &mut R) -> usize {
    let lambda = rate_hz * t_s_us as f64 * 1e-6;
    if !(lambda > 0.0) {
        return 1;
    }
    let draw: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
    (draw as usize).max(1)
}

/// Incremental trace generator. Windows must be emitted in time order;
/// gaps are filled with idle windows.
pub struct ChannelGenerator {
    scenario: ChannelScenario,
    modulation: ModulationConfig,
    rng: ChaCha8Rng,
    baseline: Vec<f64>,
    motion_phase: Vec<f64>,
    impact_gain: Vec<f64>,
    segment_starts: Vec<i64>,
    segment: usize,
    last_sample_us: Option<i64>,
    cursor_us: i64,
    std_normal: Normal<f64>,
}

impl ChannelGenerator {
    pub fn new(scenario: ChannelScenario, modulation: ModulationConfig) -> Result<Self> {
        scenario.validate()?;
        modulation.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let d = scenario.subcarriers;
        let baseline = (0..d)
            .map(|_| scenario.baseline_level + scenario.baseline_spread * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let motion_phase = (0..d).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        let impact_gain = random_gain(&mut rng, d);
        let segment_starts = scenario.segment_starts_us();
        let mut gen = Self {
            scenario,
            modulation,
            rng,
            baseline,
            motion_phase,
            impact_gain,
            segment_starts,
            segment: 0,
            last_sample_us: None,
            cursor_us: 0,
            std_normal: Normal::new(0.0, 1.0).expect("unit normal"),
        };
        gen.apply_jump(0);
        Ok(gen)
    }

    pub fn scenario(&self) -> &ChannelScenario {
        &self.scenario
    }

    pub fn modulation(&self) -> &ModulationConfig {
        &self.modulation
    }

    pub fn duration_us(&self) -> i64 {
        self.scenario.duration_us()
    }

    /// End of the last emitted window.
    pub fn cursor_us(&self) -> i64 {
        self.cursor_us
    }

    fn apply_jump(&mut self, segment: usize) {
        if let Some(j) = &self.scenario.segments[segment].abrupt_jump {
            for (b, d) in self.baseline.iter_mut().zip(&j.baseline_delta) {
                *b += d;
            }
            if let Some(g) = &j.impact_gain {
                self.impact_gain.clone_from(g);
            }
        }
    }

    /// Emits idle windows of length T_s up to `t_us` (the last one may be
    /// shorter).
    pub fn fill_idle_until(&mut self, t_us: i64, out: &mut Trace) -> Result<()> {
        let t_us = t_us.min(self.duration_us());
        while self.cursor_us < t_us {
            let dur = self.modulation.t_s_us.min(t_us - self.cursor_us);
            let entry = ScheduleEntry {
                t_start_us: self.cursor_us,
                duration_us: dur,
                kind: WindowKind::Idle,
            };
            self.emit_window(&entry, out)?;
        }
        Ok(())
    }

    /// Emits one scheduled window, idling up to its start first.
    pub fn emit(&mut self, entry: &ScheduleEntry, out: &mut Trace) -> Result<()> {
        let duration_us = self.duration_us();
        if entry.t_start_us < self.cursor_us {
            return Err(Error::InvalidConfig(format!(
                "schedule entry at {} us overlaps the previous window ending at {} us",
                entry.t_start_us, self.cursor_us
            )));
        }
        if entry.duration_us <= 0 {
            return Err(Error::InvalidConfig("schedule entry has no duration".into()));
        }
        if entry.t_end_us() > duration_us {
            return Err(Error::ScheduleOutOfRange {
                t_us: entry.t_start_us,
                duration_us,
            });
        }
        self.fill_idle_until(entry.t_start_us, out)?;
        self.emit_window(entry, out)
    }

    fn emit_window(&mut self, entry: &ScheduleEntry, out: &mut Trace) -> Result<()> {
        let on = match entry.kind {
            WindowKind::Symbol(l) => l.bit(),
            WindowKind::Idle => false,
            WindowKind::Chip(c) => {
                let flipped =
                    self.modulation.chip_flip_prob > 0.0 && self.rng.random::<f64>() < self.modulation.chip_flip_prob;
                (c > 0) != flipped
            }
        };
        out.annotations.push(Annotation {
            t_us: entry.t_start_us,
            truth: entry.kind.truth(),
        });

        let dur = entry.duration_us;
        let n = sample_count_for_window(self.scenario.sample_rate_hz, dur, &mut self.rng)
            .max(self.scenario.min_samples_per_window)
            .min(dur as usize);
        let mut offsets: Vec<usize> = index::sample(&mut self.rng, dur as usize, n).into_vec();
        offsets.sort_unstable();

        for off in offsets {
            let t = entry.t_start_us + off as i64;
            let values = self.sample_at(t, on);
            out.samples.push(SampleVector {
                values,
                timestamp_us: t,
            });
        }
        self.cursor_us = entry.t_end_us();
        Ok(())
    }

    fn sample_at(&mut self, t_us: i64, on: bool) -> Vec<f64> {
        while self.segment + 1 < self.segment_starts.len() && self.segment_starts[self.segment + 1] <= t_us {
            self.segment += 1;
            self.apply_jump(self.segment);
        }
        let seg = &self.scenario.segments[self.segment];
        let dt_s = self.last_sample_us.map_or(0.0, |prev| (t_us - prev) as f64 * 1e-6);
        self.last_sample_us = Some(t_us);
        let walk = seg.baseline_drift_rate * dt_s.sqrt();
        if walk > 0.0 {
            for b in self.baseline.iter_mut() {
                *b += walk * self.std_normal.sample(&mut self.rng);
            }
        }

        let impact = if on && self.rng.random::<f64>() < self.modulation.impact_prob {
            let sign = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * self.modulation.impact_magnitude * self.rng.random_range(0.5..1.5)
        } else {
            0.0
        };

        let t_s = t_us as f64 * 1e-6;
        let sigma = seg.awgn_sigma;
        let motion = seg.motion_noise.clone();
        (0..self.baseline.len())
            .map(|d| {
                let mut v = self.baseline[d] + impact * self.impact_gain[d];
                if let Some(m) = &motion {
                    v += m.amplitude * (std::f64::consts::TAU * m.freq_hz * t_s + self.motion_phase[d]).sin();
                }
                if sigma > 0.0 {
                    v += sigma * self.std_normal.sample(&mut self.rng);
                }
                v.max(0.0)
            })
            .collect()
    }
}

/// Per-subcarrier impact gains, uniform in [0, 1.5).
fn random_gain<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(0.0..1.5)).collect()
}

/// Generates the full scenario trace for a fixed schedule.
pub fn generate_trace(
    scenario: &ChannelScenario,
    modulation: &ModulationConfig,
    schedule: &[ScheduleEntry],
) -> Result<Trace> {
    let mut gen = ChannelGenerator::new(scenario.clone(), modulation.clone())?;
    let mut out = Trace::new();
    for e in schedule {
        gen.emit(e, &mut out)?;
    }
    gen.fill_idle_until(gen.duration_us(), &mut out)?;
    Ok(out)
}

/// Back-to-back symbol windows starting at `t0_us`.
pub fn symbol_schedule(t0_us: i64, t_s_us: i64, symbols: &[SymbolLabel]) -> Vec<ScheduleEntry> {
    symbols
        .iter()
        .enumerate()
        .map(|(i, &s)| ScheduleEntry {
            t_start_us: t0_us + i as i64 * t_s_us,
            duration_us: t_s_us,
            kind: WindowKind::Symbol(s),
        })
        .collect()
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "static",
    "walking",
    "moving-rx",
    "abrupt",
    "four-phase",
    "drift",
    "confusion",
    "quiet",
];

const DEFAULT_SUBCARRIERS: usize = 12;
const DEFAULT_RATE_HZ: f64 = 2000.0;

pub fn static_segment(duration_ms: u64) -> DynamicsSegment {
    DynamicsSegment {
        duration_ms,
        baseline_drift_rate: 0.002,
        motion_noise: None,
        awgn_sigma: 0.025,
        abrupt_jump: None,
    }
}

pub fn walking_segment(duration_ms: u64) -> DynamicsSegment {
    DynamicsSegment {
        duration_ms,
        baseline_drift_rate: 0.005,
        motion_noise: Some(MotionNoise {
            amplitude: 0.08,
            freq_hz: 1.0,
        }),
        awgn_sigma: 0.03,
        abrupt_jump: None,
    }
}

pub fn moving_rx_segment(duration_ms: u64) -> DynamicsSegment {
    DynamicsSegment {
        duration_ms,
        baseline_drift_rate: 0.02,
        motion_noise: None,
        awgn_sigma: 0.03,
        abrupt_jump: None,
    }
}

/// Step change of environment: every subcarrier jumps by 0.25 to 0.4 with
/// a seeded sign, the impact gains are redrawn and the noise floor rises.
pub fn abrupt_segment(duration_ms: u64, subcarriers: usize, seed: u64) -> DynamicsSegment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAB12_u64);
    let baseline_delta = (0..subcarriers)
        .map(|_| {
            let mag = rng.random_range(0.25..0.4);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let impact_gain = Some(random_gain(&mut rng, subcarriers));
    DynamicsSegment {
        duration_ms,
        baseline_drift_rate: 0.005,
        motion_noise: None,
        awgn_sigma: 0.04,
        abrupt_jump: Some(AbruptJump {
            baseline_delta,
            impact_gain,
        }),
    }
}

/// Builds a named scenario of `duration_ms` total length.
pub fn preset(name: &str, duration_ms: u64, seed: u64) -> Result<(ChannelScenario, ModulationConfig)> {
    let d = DEFAULT_SUBCARRIERS;
    let mut modulation = ModulationConfig::default();
    let segments = match name {
        "static" => vec![static_segment(duration_ms)],
        "walking" => vec![walking_segment(duration_ms)],
        "moving-rx" => vec![moving_rx_segment(duration_ms)],
        "drift" => vec![DynamicsSegment {
            baseline_drift_rate: 0.006,
            ..static_segment(duration_ms)
        }],
        "abrupt" => {
            let first = duration_ms / 3;
            vec![static_segment(first), abrupt_segment(duration_ms - first, d, seed)]
        }
        "four-phase" => {
            let q = duration_ms / 4;
            vec![
                static_segment(q),
                walking_segment(q),
                moving_rx_segment(q),
                abrupt_segment(duration_ms - 3 * q, d, seed),
            ]
        }
        "confusion" => {
            modulation.impact_magnitude = 0.06;
            modulation.impact_prob = 0.5;
            vec![DynamicsSegment {
                duration_ms,
                baseline_drift_rate: 0.005,
                motion_noise: Some(MotionNoise {
                    amplitude: 0.1,
                    freq_hz: 1.0,
                }),
                awgn_sigma: 0.035,
                abrupt_jump: None,
            }]
        }
        "quiet" => vec![DynamicsSegment {
            duration_ms,
            baseline_drift_rate: 0.0,
            motion_noise: None,
            awgn_sigma: 0.025,
            abrupt_jump: None,
        }],
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown scenario preset '{other}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    let scenario = ChannelScenario {
        segments,
        subcarriers: d,
        sample_rate_hz: DEFAULT_RATE_HZ,
        sample_jitter: JitterModel::PoissonCountPerWindow,
        min_samples_per_window: default_min_samples(),
        baseline_level: default_baseline_level(),
        baseline_spread: default_baseline_spread(),
        seed,
    };
    Ok((scenario, modulation))
}

/// Scenario plus modulation as stored in a TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenario: ChannelScenario,
    #[serde(default)]
    pub modulation: ModulationConfig,
}

impl ScenarioFile {
    pub fn from_toml(s: &str) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(s)?;
        f.scenario.validate()?;
        f.modulation.validate()?;
        Ok(f)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}
