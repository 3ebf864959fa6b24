//! Samples, frames, symbol labels, labeled datasets and packets.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One receiver measurement: `D` linear amplitudes (CSI subcarriers, or a
/// single RSSI value) taken at `timestamp_us`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVector {
    pub values: Vec<f64>,
    pub timestamp_us: i64,
}

impl SampleVector {
    pub fn new(values: Vec<f64>, timestamp_us: i64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("sample vector needs D >= 1".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite amplitude {v}")));
        }
        Ok(Self { values, timestamp_us })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Mean amplitude across subcarriers.
    #[inline]
    pub fn energy(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// The samples of one symbol window `[t_start_us, t_end_us)`.
///
/// The number of samples `N` varies from window to window; all samples share
/// the same width `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    samples: Vec<SampleVector>,
    t_start_us: i64,
    t_end_us: i64,
}

impl Frame {
    pub fn new(samples: Vec<SampleVector>, t_start_us: i64, t_end_us: i64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyWindow { index: 0, t_start_us });
        }
        if t_end_us <= t_start_us {
            return Err(Error::InvalidConfig(format!(
                "frame window [{t_start_us}, {t_end_us}) is empty"
            )));
        }
        let d = samples[0].dim();
        let mut prev = i64::MIN;
        for s in &samples {
            if s.dim() != d {
                return Err(Error::LengthMismatch {
                    expected: d,
                    got: s.dim(),
                });
            }
            if s.timestamp_us <= prev || s.timestamp_us < t_start_us || s.timestamp_us >= t_end_us {
                return Err(Error::InvalidConfig(format!(
                    "sample timestamp {} out of order or outside [{t_start_us}, {t_end_us})",
                    s.timestamp_us
                )));
            }
            prev = s.timestamp_us;
        }
        Ok(Self {
            samples,
            t_start_us,
            t_end_us,
        })
    }

    /// Builds a frame from raw rows, spreading timestamps evenly over the
    /// window. Handy for tests and synthetic inputs.
    pub fn from_rows(rows: Vec<Vec<f64>>, t_start_us: i64, t_end_us: i64) -> Result<Self> {
        let n = rows.len() as i64;
        if n == 0 {
            return Err(Error::EmptyWindow { index: 0, t_start_us });
        }
        let span = t_end_us - t_start_us;
        if span < n {
            return Err(Error::InvalidConfig(format!(
                "{n} samples do not fit in a {span} us window"
            )));
        }
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(j, v)| SampleVector::new(v, t_start_us + j as i64 * span / n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, t_start_us, t_end_us)
    }

    pub fn samples(&self) -> &[SampleVector] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn t_start_us(&self) -> i64 {
        self.t_start_us
    }

    pub fn t_end_us(&self) -> i64 {
        self.t_end_us
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.samples[j].values
    }

    /// Variance of the per-sample energy over the window (population form).
    pub fn energy_variance(&self) -> f64 {
        energy_variance(&self.samples)
    }

    /// Same window, sample vectors reordered by `order`; timestamps stay in
    /// their original slots.
    pub fn permuted(&self, order: &[usize]) -> Self {
        debug_assert_eq!(order.len(), self.samples.len());
        let samples = order
            .iter()
            .zip(&self.samples)
            .map(|(&src, slot)| SampleVector {
                values: self.samples[src].values.clone(),
                timestamp_us: slot.timestamp_us,
            })
            .collect();
        Self {
            samples,
            t_start_us: self.t_start_us,
            t_end_us: self.t_end_us,
        }
    }
}

/// Population variance of per-sample energy.
pub fn energy_variance(samples: &[SampleVector]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    let e: Vec<f64> = samples.iter().map(SampleVector::energy).collect();
    let mean = e.iter().sum::<f64>() / n;
    e.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SymbolLabel {
    Zero,
    One,
}

impl SymbolLabel {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            SymbolLabel::One
        } else {
            SymbolLabel::Zero
        }
    }

    pub fn bit(self) -> bool {
        self == SymbolLabel::One
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFrame {
    pub frame: Frame,
    pub label: SymbolLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Self-labeled frames from CRC-passing packets; evicts oldest-first.
    Passive,
    /// Frames cut from a requested training sequence.
    Active,
}

pub const DEFAULT_PASSIVE_CAPACITY: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    entries: VecDeque<LabeledFrame>,
    capacity: usize,
    kind: DatasetKind,
}

impl LabeledDataset {
    pub fn new(kind: DatasetKind, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("dataset capacity must be positive".into()));
        }
        Ok(Self {
            entries: VecDeque::new(),
            capacity,
            kind,
        })
    }

    pub fn passive() -> Self {
        Self::new(DatasetKind::Passive, DEFAULT_PASSIVE_CAPACITY).expect("nonzero capacity")
    }

    /// Unbounded active dataset.
    pub fn active() -> Self {
        Self::new(DatasetKind::Active, usize::MAX).expect("nonzero capacity")
    }

    pub fn from_entries(kind: DatasetKind, entries: Vec<LabeledFrame>) -> Self {
        let capacity = entries.len().max(1);
        Self {
            entries: entries.into(),
            capacity: if kind == DatasetKind::Active {
                usize::MAX
            } else {
                capacity
            },
            kind,
        }
    }

    /// Appends one entry. A full passive dataset drops its oldest entry; a
    /// full active dataset rejects the push.
    pub fn push(&mut self, entry: LabeledFrame) -> Result<()> {
        if self.entries.len() == self.capacity {
            match self.kind {
                DatasetKind::Passive => {
                    self.entries.pop_front();
                }
                DatasetKind::Active => {
                    return Err(Error::InvalidConfig(format!(
                        "active dataset is full ({} entries)",
                        self.capacity
                    )))
                }
            }
        }
        self.entries.push_back(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn get(&self, i: usize) -> Option<&LabeledFrame> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &LabeledFrame> {
        self.entries.iter()
    }

    pub fn to_vec(&self) -> Vec<LabeledFrame> {
        self.entries.iter().cloned().collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0usize; 2];
        for e in &self.entries {
            c[e.label.index()] += 1;
        }
        c
    }

    pub fn has_both_classes(&self) -> bool {
        let c = self.class_counts();
        c[0] > 0 && c[1] > 0
    }
}

/// Fixed data sync word sent at the head of every packet, MSB first.
pub const SYNC_WORD: u8 = 0b1011_0010;
pub const SYNC_SYMBOLS: usize = 8;
pub const PAYLOAD_BITS: usize = 64;
pub const CRC_BITS: usize = 16;
pub const PACKET_SYMBOLS: usize = SYNC_SYMBOLS + PAYLOAD_BITS + CRC_BITS;

/// A data packet: 8-symbol sync word, 64-bit payload, CRC-16 over the
/// payload. One bit per symbol, MSB first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub sync: u8,
    pub payload: u64,
    pub crc: u16,
}

impl Packet {
    pub fn new(payload: u64) -> Self {
        Self {
            sync: SYNC_WORD,
            payload,
            crc: crc16_ccitt_false(&payload.to_be_bytes()),
        }
    }

    pub fn is_valid(&self) -> bool {
        crc16_verify(&self.payload.to_be_bytes(), self.crc)
    }

    pub fn to_symbols(&self) -> Vec<SymbolLabel> {
        let mut out = Vec::with_capacity(PACKET_SYMBOLS);
        push_bits(&mut out, self.sync as u64, SYNC_SYMBOLS);
        push_bits(&mut out, self.payload, PAYLOAD_BITS);
        push_bits(&mut out, self.crc as u64, CRC_BITS);
        out
    }

    pub fn from_symbols(symbols: &[SymbolLabel]) -> Result<Self> {
        if symbols.len() != PACKET_SYMBOLS {
            return Err(Error::LengthMismatch {
                expected: PACKET_SYMBOLS,
                got: symbols.len(),
            });
        }
        let sync = read_bits(&symbols[..SYNC_SYMBOLS]) as u8;
        let payload = read_bits(&symbols[SYNC_SYMBOLS..SYNC_SYMBOLS + PAYLOAD_BITS]);
        let crc = read_bits(&symbols[SYNC_SYMBOLS + PAYLOAD_BITS..]) as u16;
        Ok(Self { sync, payload, crc })
    }
}

pub fn sync_symbols() -> Vec<SymbolLabel> {
    let mut out = Vec::with_capacity(SYNC_SYMBOLS);
    push_bits(&mut out, SYNC_WORD as u64, SYNC_SYMBOLS);
    out
}

fn push_bits(out: &mut Vec<SymbolLabel>, value: u64, width: usize) {
    for i in (0..width).rev() {
        out.push(SymbolLabel::from_bit((value >> i) & 1 == 1));
    }
}

fn read_bits(symbols: &[SymbolLabel]) -> u64 {
    symbols.iter().fold(0u64, |acc, s| (acc << 1) | s.bit() as u64)
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final XOR.
pub fn crc16_ccitt_false(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in bytes {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

pub fn crc16_verify(bytes: &[u8], crc: u16) -> bool {
    crc16_ccitt_false(bytes) == crc
}

/// Cuts a timestamp-sorted sample stream into `count` consecutive windows
/// `[t0 + k*t_s, t0 + (k+1)*t_s)`.
pub fn segment_stream(samples: &[SampleVector], t0_us: i64, t_s_us: i64, count: usize) -> Result<Vec<Frame>> {
    if count == 0 {
        return Err(Error::InvalidConfig("segment count must be >= 1".into()));
    }
    if t_s_us <= 0 {
        return Err(Error::InvalidConfig("symbol window must be positive".into()));
    }
    let mut frames = Vec::with_capacity(count);
    let mut lo = samples.partition_point(|s| s.timestamp_us < t0_us);
    for k in 0..count {
        let start = t0_us + k as i64 * t_s_us;
        let end = start + t_s_us;
        let hi = lo + samples[lo..].partition_point(|s| s.timestamp_us < end);
        if hi == lo {
            return Err(Error::EmptyWindow {
                index: k,
                t_start_us: start,
            });
        }
        frames.push(Frame::new(samples[lo..hi].to_vec(), start, end)?);
        lo = hi;
    }
    Ok(frames)
}
