//! Training-sequence preamble: Barker-11 chips keyed by window variance.
//!
//! A training sequence is `head preamble | T_g of symbol 1 | T_g of symbol 0
//! | tail preamble`. Each preamble chip lasts `T_p` (twice a data symbol);
//! a +1 chip is sent as transmitter activity, a -1 chip as silence. The
//! receiver turns each `T_p` window into +1/-1 by comparing the variance of
//! per-sample energy against a threshold, then correlates 11 consecutive
//! decisions with the code. No trained decoder is involved, so detection
//! keeps working after the decoder has failed.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{ScheduleEntry, WindowKind};
use crate::error::{Error, Result};
use crate::types::{
    energy_variance, segment_stream, DatasetKind, LabeledDataset, LabeledFrame, SampleVector, SymbolLabel,
};

pub const BARKER_LEN: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarkerCode {
    chips: [i8; BARKER_LEN],
}

impl Default for BarkerCode {
    fn default() -> Self {
        Self {
            chips: [1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1],
        }
    }
}

impl BarkerCode {
    /// Accepts any +/-1 sequence of length 11 whose aperiodic autocorrelation
    /// has off-peak magnitude at most 1.
    pub fn new(chips: &[i8]) -> Result<Self> {
        if chips.len() != BARKER_LEN {
            return Err(Error::LengthMismatch {
                expected: BARKER_LEN,
                got: chips.len(),
            });
        }
        if chips.iter().any(|&c| c != 1 && c != -1) {
            return Err(Error::InvalidConfig("chips must be +1 or -1".into()));
        }
        let mut arr = [0i8; BARKER_LEN];
        arr.copy_from_slice(chips);
        let code = Self { chips: arr };
        if (1..BARKER_LEN).any(|v| code.autocorrelation(v).abs() > 1) {
            return Err(Error::InvalidConfig(
                "sequence lacks the Barker autocorrelation property".into(),
            ));
        }
        Ok(code)
    }

    pub fn chips(&self) -> &[i8; BARKER_LEN] {
        &self.chips
    }

    /// Aperiodic autocorrelation `sum_j b_j b_{j+shift}`.
    pub fn autocorrelation(&self, shift: usize) -> i32 {
        if shift >= BARKER_LEN {
            return 0;
        }
        (0..BARKER_LEN - shift)
            .map(|j| self.chips[j] as i32 * self.chips[j + shift] as i32)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VarianceThreshold {
    Fixed {
        value: f64,
    },
    /// `multiplier` times the median variance of recent windows that were
    /// themselves classified -1.
    RollingMedian {
        multiplier: f64,
        history: usize,
    },
}

impl Default for VarianceThreshold {
    fn default() -> Self {
        VarianceThreshold::RollingMedian {
            multiplier: 3.0,
            history: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreambleConfig {
    pub t_p_us: i64,
    #[serde(default)]
    pub threshold: VarianceThreshold,
    pub corr_threshold: i32,
}

impl Default for PreambleConfig {
    fn default() -> Self {
        Self {
            t_p_us: 8000,
            threshold: VarianceThreshold::default(),
            corr_threshold: 9,
        }
    }
}

impl PreambleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_p_us <= 0 {
            return Err(Error::InvalidConfig("T_p must be positive".into()));
        }
        if !(1..=BARKER_LEN as i32).contains(&self.corr_threshold) {
            return Err(Error::InvalidConfig("correlation threshold must lie in [1, 11]".into()));
        }
        match &self.threshold {
            VarianceThreshold::Fixed { value } if !(*value >= 0.0) => {
                Err(Error::InvalidConfig("fixed threshold must be >= 0".into()))
            }
            VarianceThreshold::RollingMedian { multiplier, history } if !(*multiplier > 0.0) || *history == 0 => Err(
                Error::InvalidConfig("rolling threshold needs a positive multiplier and history".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSequenceSpec {
    pub t_g_us: i64,
    pub t_s_us: i64,
    pub t_p_us: i64,
    pub head: BarkerCode,
    pub tail: BarkerCode,
}

impl Default for TrainingSequenceSpec {
    fn default() -> Self {
        Self {
            t_g_us: 80_000,
            t_s_us: 4000,
            t_p_us: 8000,
            head: BarkerCode::default(),
            tail: BarkerCode::default(),
        }
    }
}

impl TrainingSequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_s_us <= 0 || self.t_p_us <= 0 {
            return Err(Error::InvalidConfig("window lengths must be positive".into()));
        }
        if self.t_g_us <= 0 || self.t_g_us % self.t_s_us != 0 || self.t_g_us % self.t_p_us != 0 {
            return Err(Error::InvalidConfig(format!(
                "T_g ({} us) must be a positive multiple of T_s and T_p",
                self.t_g_us
            )));
        }
        Ok(())
    }

    pub fn frames_per_block(&self) -> usize {
        (self.t_g_us / self.t_s_us) as usize
    }

    pub fn preamble_us(&self) -> i64 {
        BARKER_LEN as i64 * self.t_p_us
    }

    pub fn duration_us(&self) -> i64 {
        2 * self.preamble_us() + 2 * self.t_g_us
    }
}

/// Head preamble, T_g of ones, T_g of zeros, tail preamble, from `t0_us`.
pub fn build_training_schedule(spec: &TrainingSequenceSpec, t0_us: i64) -> Result<Vec<ScheduleEntry>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(2 * BARKER_LEN + 2 * spec.frames_per_block());
    let mut t = t0_us;
    let chips = |code: &BarkerCode, t: &mut i64, out: &mut Vec<ScheduleEntry>| {
        for &c in code.chips() {
            out.push(ScheduleEntry {
                t_start_us: *t,
                duration_us: spec.t_p_us,
                kind: WindowKind::Chip(c),
            });
            *t += spec.t_p_us;
        }
    };
    chips(&spec.head, &mut t, &mut out);
    for label in [SymbolLabel::One, SymbolLabel::Zero] {
        for _ in 0..spec.frames_per_block() {
            out.push(ScheduleEntry {
                t_start_us: t,
                duration_us: spec.t_s_us,
                kind: WindowKind::Symbol(label),
            });
            t += spec.t_s_us;
        }
    }
    chips(&spec.tail, &mut t, &mut out);
    Ok(out)
}

/// Per-window +1/-1 decisions over `[t0, t0 + k*window)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub chips: Vec<i8>,
    pub variances: Vec<f64>,
    /// Index of the first sample of each window in the input slice.
    pub window_first_sample: Vec<usize>,
    pub t0_us: i64,
    pub window_us: i64,
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const ROLLING_WARMUP: usize = 16;

/// Threshold state for +1/-1 window decisions.
///
/// A rolling threshold waits for `ROLLING_WARMUP` windows, seeds its
/// history with them, then decides each window in order and remembers the
/// ones it called -1.
#[derive(Debug, Clone)]
pub struct ChipClassifier {
    threshold: VarianceThreshold,
    history: VecDeque<f64>,
    pending: Vec<f64>,
    warm: bool,
}

impl ChipClassifier {
    pub fn new(threshold: VarianceThreshold) -> Self {
        let warm = matches!(threshold, VarianceThreshold::Fixed { .. });
        Self {
            threshold,
            history: VecDeque::new(),
            pending: Vec::new(),
            warm,
        }
    }

    fn decide(&mut self, v: f64) -> i8 {
        match &self.threshold {
            VarianceThreshold::Fixed { value } => {
                if v > *value {
                    1
                } else {
                    -1
                }
            }
            VarianceThreshold::RollingMedian { multiplier, history } => {
                let th = multiplier * median(self.history.iter().copied());
                if v > th {
                    1
                } else {
                    if self.history.len() == *history {
                        self.history.pop_front();
                    }
                    self.history.push_back(v);
                    -1
                }
            }
        }
    }

    /// Feeds one window variance; returns the decisions that became final
    /// (none during warmup, then the whole warmup batch at once).
    pub fn push(&mut self, variance: f64) -> Vec<i8> {
        if self.warm {
            return vec![self.decide(variance)];
        }
        self.pending.push(variance);
        let VarianceThreshold::RollingMedian { history, .. } = self.threshold else {
            unreachable!("fixed thresholds start warm")
        };
        if self.pending.len() < ROLLING_WARMUP.min(history) {
            return Vec::new();
        }
        self.finish_warmup()
    }

    fn finish_warmup(&mut self) -> Vec<i8> {
        self.warm = true;
        let pending = std::mem::take(&mut self.pending);
        if matches!(self.threshold, VarianceThreshold::RollingMedian { .. }) {
            // Seed from the quietest window only: a receiver that wakes up
            // inside traffic may see one idle window in the whole warmup.
            // The history catches up with the idle level within a few windows.
            self.history = pending
                .iter()
                .copied()
                .min_by(|a, b| a.total_cmp(b))
                .into_iter()
                .collect();
        }
        pending.into_iter().map(|v| self.decide(v)).collect()
    }

    pub fn classify_all(&mut self, variances: &[f64]) -> Vec<i8> {
        let mut out: Vec<i8> = variances.iter().flat_map(|&v| self.push(v)).collect();
        if !self.warm {
            out.extend(self.finish_warmup());
        }
        out
    }
}

/// Binarizes the full `window_us` windows between `t0_us` and `t_end_us`:
/// +1 when the variance of per-sample energy exceeds the threshold.
pub fn binarize(
    samples: &[SampleVector],
    t0_us: i64,
    t_end_us: i64,
    window_us: i64,
    threshold: &VarianceThreshold,
) -> Result<Binarized> {
    if window_us <= 0 {
        return Err(Error::InvalidConfig("window must be positive".into()));
    }
    let count = ((t_end_us - t0_us).max(0) / window_us) as usize;
    let mut variances = Vec::with_capacity(count);
    let mut firsts = Vec::with_capacity(count);
    let mut lo = samples.partition_point(|s| s.timestamp_us < t0_us);
    let mut valid = 0;
    for k in 0..count {
        let end = t0_us + (k as i64 + 1) * window_us;
        let hi = lo + samples[lo..].partition_point(|s| s.timestamp_us < end);
        if hi - lo >= 2 {
            valid += 1;
        }
        firsts.push(lo);
        variances.push(energy_variance(&samples[lo..hi]));
        lo = hi;
    }
    if count < BARKER_LEN || valid < count {
        return Err(Error::InsufficientSamples {
            required: BARKER_LEN.max(count),
            found: valid,
        });
    }

    let mut classifier = ChipClassifier::new(threshold.clone());
    let chips = classifier.classify_all(&variances);
    Ok(Binarized {
        chips,
        variances,
        window_first_sample: firsts,
        t0_us,
        window_us,
    })
}

/// Zero-lag correlation of 11 decisions with the code.
pub fn correlate(seq: &[i8], code: &BarkerCode) -> Result<i32> {
    if seq.len() != BARKER_LEN {
        return Err(Error::LengthMismatch {
            expected: BARKER_LEN,
            got: seq.len(),
        });
    }
    Ok(seq.iter().zip(code.chips()).map(|(&a, &b)| a as i32 * b as i32).sum())
}

/// Correlation at every window offset.
pub fn correlation_profile(chips: &[i8], code: &BarkerCode) -> Vec<i32> {
    if chips.len() < BARKER_LEN {
        return Vec::new();
    }
    chips
        .windows(BARKER_LEN)
        .map(|w| correlate(w, code).expect("window has code length"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreambleDetection {
    /// Window offset of the first chip.
    pub window: usize,
    /// First sample after the last chip window.
    pub start_index: usize,
    /// Time the last chip window ends.
    pub start_us: i64,
    pub score: i32,
}

/// First window offset whose correlation reaches `corr_threshold`.
pub fn detect_preamble(
    samples: &[SampleVector],
    t0_us: i64,
    t_end_us: i64,
    cfg: &PreambleConfig,
    code: &BarkerCode,
) -> Result<Option<PreambleDetection>> {
    cfg.validate()?;
    let bin = binarize(samples, t0_us, t_end_us, cfg.t_p_us, &cfg.threshold)?;
    let profile = correlation_profile(&bin.chips, code);
    Ok(profile
        .iter()
        .position(|&c| c >= cfg.corr_threshold)
        .map(|w| detection_at(samples, &bin, w, profile[w])))
}

fn detection_at(samples: &[SampleVector], bin: &Binarized, window: usize, score: i32) -> PreambleDetection {
    let start_us = bin.t0_us + (window + BARKER_LEN) as i64 * bin.window_us;
    PreambleDetection {
        window,
        start_index: samples.partition_point(|s| s.timestamp_us < start_us),
        start_us,
        score,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreambleSide {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocatedSequence {
    /// Start of the symbol-1 block.
    pub start_us: i64,
    pub start_index: usize,
    pub via: PreambleSide,
    pub score: i32,
    /// For a head hit: whether the tail preamble correlates where expected.
    pub tail_confirmed: bool,
}

const BLOCK_AGREEMENT: f64 = 0.75;

fn block_agreement(chips: &[i8], from: usize, len: usize, want: i8) -> Option<f64> {
    if len == 0 || from + len > chips.len() {
        return None;
    }
    let hits = chips[from..from + len].iter().filter(|&&c| c == want).count();
    Some(hits as f64 / len as f64)
}

/// Mean agreement of the +1 and -1 blocks starting at `s`, if both pass.
fn blocks_at(chips: &[i8], s: usize, g: usize) -> Option<f64> {
    let a = block_agreement(chips, s, g, 1)?;
    let b = block_agreement(chips, s + g, g, -1)?;
    (a >= BLOCK_AGREEMENT && b >= BLOCK_AGREEMENT).then_some(0.5 * (a + b))
}

/// A sequence found in a chip stream, positions in windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChipMatch {
    /// First window of the symbol-1 block.
    pub start_window: usize,
    pub via: PreambleSide,
    pub score: i32,
    pub tail_confirmed: bool,
}

/// Tests every correlation peak as a head (followed by a +1 block then a -1
/// block) and as a tail (preceded by the same structure). A spurious peak
/// inside or just before a real sequence can still pass the block test, so
/// among candidates within one block of the earliest a confirmed tail wins,
/// then the best block fit.
pub fn locate_in_chips(chips: &[i8], spec: &TrainingSequenceSpec, corr_threshold: i32) -> Option<ChipMatch> {
    let head = correlation_profile(chips, &spec.head);
    let tail = correlation_profile(chips, &spec.tail);
    let g = (spec.t_g_us / spec.t_p_us) as usize;
    let mut found: Vec<(f64, ChipMatch)> = Vec::new();
    for w in 0..head.len().max(tail.len()) {
        if let Some(first) = found.first() {
            if w > first.1.start_window + 3 * g + 2 * BARKER_LEN {
                break;
            }
        }
        if head.get(w).is_some_and(|&c| c >= corr_threshold) {
            let e = w + BARKER_LEN;
            if let Some(fit) = blocks_at(chips, e, g) {
                found.push((
                    fit,
                    ChipMatch {
                        start_window: e,
                        via: PreambleSide::Head,
                        score: head[w],
                        tail_confirmed: tail.get(e + 2 * g).is_some_and(|&c| c >= corr_threshold),
                    },
                ));
            }
        }
        if w >= 2 * g && tail.get(w).is_some_and(|&c| c >= corr_threshold) {
            let s = w - 2 * g;
            if let Some(fit) = blocks_at(chips, s, g) {
                found.push((
                    fit,
                    ChipMatch {
                        start_window: s,
                        via: PreambleSide::Tail,
                        score: tail[w],
                        tail_confirmed: true,
                    },
                ));
            }
        }
    }
    let first = found.first()?.1.start_window;
    found
        .into_iter()
        .filter(|(_, m)| m.start_window <= first + g)
        .max_by(|a, b| {
            a.1.tail_confirmed
                .cmp(&b.1.tail_confirmed)
                .then(a.0.total_cmp(&b.0))
                .then(a.1.score.cmp(&b.1.score))
                .then((a.1.via == PreambleSide::Head).cmp(&(b.1.via == PreambleSide::Head)))
                .then(b.1.start_window.cmp(&a.1.start_window))
        })
        .map(|(_, m)| m)
}

/// Finds a training sequence by either of its preambles, so a corrupted
/// head can be recovered from the tail.
pub fn locate_training_sequence(
    samples: &[SampleVector],
    t0_us: i64,
    t_end_us: i64,
    spec: &TrainingSequenceSpec,
    cfg: &PreambleConfig,
) -> Result<Option<LocatedSequence>> {
    spec.validate()?;
    cfg.validate()?;
    if cfg.t_p_us != spec.t_p_us {
        return Err(Error::InvalidConfig(
            "preamble config and sequence spec disagree on T_p".into(),
        ));
    }
    let bin = binarize(samples, t0_us, t_end_us, cfg.t_p_us, &cfg.threshold)?;
    Ok(locate_in_chips(&bin.chips, spec, cfg.corr_threshold).map(|m| {
        let start_us = bin.t0_us + m.start_window as i64 * bin.window_us;
        LocatedSequence {
            start_us,
            start_index: samples.partition_point(|s| s.timestamp_us < start_us),
            via: m.via,
            score: m.score,
            tail_confirmed: m.tail_confirmed,
        }
    }))
}

/// Cuts the payload into T_s frames from `start_us`: the first T_g/T_s are
/// labeled 1, the next T_g/T_s labeled 0.
pub fn extract_active_dataset(
    samples: &[SampleVector],
    spec: &TrainingSequenceSpec,
    start_us: i64,
) -> Result<LabeledDataset> {
    spec.validate()?;
    let per_block = spec.frames_per_block();
    let needed_us = start_us + 2 * spec.t_g_us;
    let last = samples.last().map_or(i64::MIN, |s| s.timestamp_us);
    if last < needed_us - spec.t_s_us {
        return Err(Error::TruncatedSequence {
            needed_us,
            trace_end_us: last.saturating_add(1),
        });
    }
    let frames = segment_stream(samples, start_us, spec.t_s_us, 2 * per_block)?;
    let entries = frames
        .into_iter()
        .enumerate()
        .map(|(i, frame)| LabeledFrame {
            frame,
            label: SymbolLabel::from_bit(i < per_block),
        })
        .collect();
    Ok(LabeledDataset::from_entries(DatasetKind::Active, entries))
}

/// Checks that the tail preamble sits where `start_us` predicts. Uses the
/// preceding zero block to warm up a rolling threshold.
pub fn verify_tail(
    samples: &[SampleVector],
    spec: &TrainingSequenceSpec,
    start_us: i64,
    cfg: &PreambleConfig,
) -> Result<bool> {
    let tail_start = start_us + 2 * spec.t_g_us;
    let lead = (spec.t_g_us / cfg.t_p_us).min(ROLLING_WARMUP as i64);
    let from = tail_start - lead * cfg.t_p_us;
    let to = tail_start + spec.preamble_us();
    let bin = binarize(samples, from, to, cfg.t_p_us, &cfg.threshold)?;
    let chips = &bin.chips[bin.chips.len() - BARKER_LEN..];
    Ok(correlate(chips, &spec.tail)? >= cfg.corr_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_trace, preset, ModulationConfig};
    use crate::trace::Truth;

    #[test]
    fn default_code_has_ideal_autocorrelation() {
        let code = BarkerCode::default();
        assert_eq!(code.autocorrelation(0), 11);
        // Independent brute force over zero-padded shifts.
        let b: Vec<i32> = code.chips().iter().map(|&c| c as i32).collect();
        for v in 1..11 {
            let mut c = 0;
            for j in 0..11 {
                let k = j + v;
                if k < 11 {
                    c += b[j] * b[k];
                }
            }
            assert!(c.abs() <= 1, "shift {v}: {c}");
            assert_eq!(c, code.autocorrelation(v));
        }
        assert!(BarkerCode::new(code.chips()).is_ok());
    }

    #[test]
    fn printed_chip_list_is_not_barker() {
        // The unsigned "1, 1" entries read as +1 give a sequence with a large sidelobe.
        let printed = [-1, 1, 1, 1, -1, 1, 1, 1, 1, 1, -1];
        assert!(BarkerCode::new(&printed).is_err());
        assert!(BarkerCode::new(&[1, 1]).is_err());
    }

    #[test]
    fn correlation_values() {
        let code = BarkerCode::default();
        let mut seq = code.chips().to_vec();
        assert_eq!(correlate(&seq, &code).unwrap(), 11);
        for i in 0..11 {
            seq = code.chips().to_vec();
            seq[i] = -seq[i];
            assert_eq!(correlate(&seq, &code).unwrap(), 9);
        }
        assert!(matches!(
            correlate(&seq[..10], &code),
            Err(Error::LengthMismatch { .. })
        ));
    }

    fn windows_from_variances(vars: &[f64]) -> Vec<SampleVector> {
        // Two samples per window at +/- sqrt(var) give exactly that energy variance.
        let mut out = Vec::new();
        for (k, &v) in vars.iter().enumerate() {
            let a = v.sqrt();
            out.push(SampleVector::new(vec![10.0 - a], k as i64 * 100).unwrap());
            out.push(SampleVector::new(vec![10.0 + a], k as i64 * 100 + 50).unwrap());
        }
        out
    }

    #[test]
    fn fixed_threshold_rule() {
        let mut vars = vec![0.0; 11];
        vars[3] = 5.0;
        let s = windows_from_variances(&vars);
        let b = binarize(&s, 0, 1100, 100, &VarianceThreshold::Fixed { value: 1.0 }).unwrap();
        assert_eq!(b.chips[3], 1);
        assert!(b.chips.iter().enumerate().all(|(i, &c)| i == 3 || c == -1));
        assert!(matches!(
            binarize(&s[..20], 0, 1000, 100, &VarianceThreshold::Fixed { value: 1.0 }),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn rolling_median_separates_idle_and_impacted() {
        let sigma2 = 0.04;
        let vars: Vec<f64> = (0..60)
            .map(|k| {
                if k % 5 == 2 {
                    10.0 * sigma2
                } else {
                    sigma2 * (0.8 + 0.01 * k as f64)
                }
            })
            .collect();
        let s = windows_from_variances(&vars);
        let b = binarize(&s, 0, 6000, 100, &VarianceThreshold::default()).unwrap();
        for (k, &c) in b.chips.iter().enumerate() {
            assert_eq!(c, if k % 5 == 2 { 1 } else { -1 }, "window {k}");
        }
    }

    fn embedded_preamble(lead_windows: i64, seed: u64) -> (crate::trace::Trace, i64) {
        let (sc, m) = preset("quiet", 2000, seed).unwrap();
        let spec = TrainingSequenceSpec::default();
        let t0 = lead_windows * spec.t_p_us;
        let sched = build_training_schedule(&spec, t0).unwrap();
        (generate_trace(&sc, &m, &sched).unwrap(), t0 + spec.preamble_us())
    }

    #[test]
    fn clean_preamble_detected_exactly_and_shift_equivariant() {
        let cfg = PreambleConfig::default();
        let code = BarkerCode::default();
        let (t, start) = embedded_preamble(20, 3);
        let d = detect_preamble(&t.samples, 0, t.end_us(), &cfg, &code)
            .unwrap()
            .unwrap();
        assert_eq!(d.start_us, start);
        assert_eq!(d.score, 11);
        assert!(t.samples[d.start_index].timestamp_us >= start);
        assert!(t.samples[d.start_index - 1].timestamp_us < start);
        let (t2, start2) = embedded_preamble(27, 3);
        let d2 = detect_preamble(&t2.samples, 0, t2.end_us(), &cfg, &code)
            .unwrap()
            .unwrap();
        assert_eq!(d2.window, d.window + 7);
        assert_eq!(d2.start_us, start2);
    }

    #[test]
    fn one_corrupted_chip_still_detected() {
        let (sc, m) = preset("quiet", 2000, 4).unwrap();
        let mut spec = TrainingSequenceSpec::default();
        let mut chips = *spec.head.chips();
        chips[5] = -chips[5];
        spec.head = BarkerCode { chips };
        let sched = build_training_schedule(&spec, 160_000).unwrap();
        let t = generate_trace(&sc, &m, &sched).unwrap();
        let d = detect_preamble(
            &t.samples,
            0,
            t.end_us(),
            &PreambleConfig::default(),
            &BarkerCode::default(),
        )
        .unwrap()
        .unwrap();
        assert_eq!(d.score, 9);
        assert_eq!(d.start_us, 160_000 + 88_000);
    }

    #[test]
    fn schedule_structure() {
        let spec = TrainingSequenceSpec::default();
        let s = build_training_schedule(&spec, 0).unwrap();
        let ones = s
            .iter()
            .filter(|e| e.kind == WindowKind::Symbol(SymbolLabel::One))
            .count();
        let zeros = s
            .iter()
            .filter(|e| e.kind == WindowKind::Symbol(SymbolLabel::Zero))
            .count();
        assert_eq!((ones, zeros), (20, 20));
        let total: i64 = s.iter().map(|e| e.duration_us).sum();
        assert_eq!(total, 2 * 11 * spec.t_p_us + 2 * spec.t_g_us);
        assert_eq!(s.last().unwrap().t_end_us(), spec.duration_us());
        let symbols: Vec<_> = s
            .iter()
            .filter_map(|e| match e.kind {
                WindowKind::Symbol(l) => Some(l),
                _ => None,
            })
            .collect();
        let changes = symbols.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 1);
        assert_eq!(symbols[0], SymbolLabel::One);
        let bad = TrainingSequenceSpec { t_g_us: 0, ..spec };
        assert!(build_training_schedule(&bad, 0).is_err());
    }

    #[test]
    fn extraction_labels_and_truncation() {
        let (t, start) = embedded_preamble(10, 8);
        let spec = TrainingSequenceSpec::default();
        let ds = extract_active_dataset(&t.samples, &spec, start).unwrap();
        assert_eq!(ds.len(), 40);
        let labels: Vec<_> = ds.iter().map(|e| e.label).collect();
        assert!(labels[..20].iter().all(|&l| l == SymbolLabel::One));
        assert!(labels[20..].iter().all(|&l| l == SymbolLabel::Zero));
        for e in ds.iter() {
            let truth = t.truth_at(e.frame.t_start_us()).unwrap();
            assert_eq!(truth, if e.label.bit() { Truth::Sym1 } else { Truth::Sym0 });
        }
        assert!(verify_tail(&t.samples, &spec, start, &PreambleConfig::default()).unwrap());

        let cut = t.slice_time(0, start + 100_000);
        assert!(matches!(
            extract_active_dataset(cut, &spec, start),
            Err(Error::TruncatedSequence { .. })
        ));
    }

    #[test]
    fn one_window_offset_mislabels_one_boundary_frame_and_flags_tail() {
        let (t, start) = embedded_preamble(10, 8);
        let spec = TrainingSequenceSpec::default();
        let shifted = start + spec.t_s_us;
        let ds = extract_active_dataset(&t.samples, &spec, shifted).unwrap();
        let mut mislabeled = 0;
        let mut in_preamble = 0;
        for e in ds.iter() {
            match t.truth_at(e.frame.t_start_us()).unwrap() {
                Truth::Sym1 => mislabeled += (e.label != SymbolLabel::One) as usize,
                Truth::Sym0 => mislabeled += (e.label != SymbolLabel::Zero) as usize,
                Truth::Preamble => in_preamble += 1,
                Truth::Idle => unreachable!(),
            }
        }
        assert_eq!(mislabeled, 1);
        assert_eq!(in_preamble, 1);
        assert!(!verify_tail(&t.samples, &spec, shifted, &PreambleConfig::default()).unwrap());
    }

    #[test]
    fn spurious_peak_before_head_loses_to_true_head() {
        let spec = TrainingSequenceSpec {
            t_g_us: 400_000,
            ..TrainingSequenceSpec::default()
        };
        let g = (spec.t_g_us / spec.t_p_us) as usize;
        let code = BarkerCode::default();
        let mut chips: Vec<i8> = vec![-1; 5];
        chips.extend(code.chips());
        let true_head = chips.len();
        chips.extend(code.chips());
        chips.extend(vec![1; g]);
        chips.extend(vec![-1; g]);
        chips.extend(spec.tail.chips());
        chips.extend(vec![-1; 5]);
        // The decoy alone would pass the block test.
        assert!(blocks_at(&chips, 5 + BARKER_LEN, g).is_some());
        let m = locate_in_chips(&chips, &spec, 9).unwrap();
        assert_eq!(m.start_window, true_head + BARKER_LEN);
        assert!(m.tail_confirmed);
    }

    #[test]
    fn locate_falls_back_to_tail() {
        let (sc, m) = preset("quiet", 2000, 6).unwrap();
        let spec = TrainingSequenceSpec::default();
        let mut sched = build_training_schedule(&spec, 80_000).unwrap();
        // Corrupt three head chips: the head alone can no longer reach 9.
        for i in [0, 4, 8] {
            if let WindowKind::Chip(c) = sched[i].kind {
                sched[i].kind = WindowKind::Chip(-c);
            }
        }
        let t = generate_trace(&sc, &m, &sched).unwrap();
        let cfg = PreambleConfig::default();
        let loc = locate_training_sequence(&t.samples, 0, t.end_us(), &spec, &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(loc.via, PreambleSide::Tail);
        assert_eq!(loc.start_us, 80_000 + spec.preamble_us());

        let clean = embedded_preamble(10, 6).0;
        let loc = locate_training_sequence(&clean.samples, 0, clean.end_us(), &spec, &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(loc.via, PreambleSide::Head);
        assert!(loc.tail_confirmed);
    }

    #[test]
    fn streaming_classifier_matches_batch() {
        let (t, _) = embedded_preamble(30, 12);
        let b = binarize(&t.samples, 0, t.end_us(), 8000, &VarianceThreshold::default()).unwrap();
        let mut c = ChipClassifier::new(VarianceThreshold::default());
        let streamed: Vec<i8> = b.variances.iter().flat_map(|&v| c.push(v)).collect();
        assert_eq!(streamed, b.chips);
    }

    #[test]
    fn idle_trace_has_no_preamble() {
        let (sc, m) = preset("quiet", 2000, 1).unwrap();
        let t = generate_trace(&sc, &ModulationConfig { ..m }, &[]).unwrap();
        let cfg = PreambleConfig::default();
        assert!(detect_preamble(&t.samples, 0, t.end_us(), &cfg, &BarkerCode::default())
            .unwrap()
            .is_none());
        assert!(
            locate_training_sequence(&t.samples, 0, t.end_us(), &TrainingSequenceSpec::default(), &cfg)
                .unwrap()
                .is_none()
        );
    }
}
