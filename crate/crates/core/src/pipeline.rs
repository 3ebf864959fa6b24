//! Receive path: sync search, packet decode, CRC gate and passive harvesting.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{predict, ModelParams};
use crate::types::{
    crc16_verify, energy_variance, sync_symbols, Frame, LabeledDataset, LabeledFrame, Packet, SymbolLabel,
    PACKET_SYMBOLS, SYNC_SYMBOLS,
};

/// Minimum sync-word symbols that must match.
pub const SYNC_MATCH_REQUIRED: usize = 7;

pub trait SymbolDecoder {
    fn decode_frame(&self, frame: &Frame) -> Result<SymbolLabel>;

    /// Shortest frame the decoder accepts.
    fn min_samples(&self) -> usize {
        1
    }
}

impl SymbolDecoder for ModelParams {
    fn decode_frame(&self, frame: &Frame) -> Result<SymbolLabel> {
        predict(self, frame)
    }

    fn min_samples(&self) -> usize {
        self.config().max_width()
    }
}

/// Symbol 1 iff the per-window energy variance exceeds a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceThresholdDecoder {
    pub threshold: f64,
}

impl VarianceThresholdDecoder {
    /// Threshold with the best training accuracy, midway between the two
    /// variances it separates.
    pub fn fit(entries: &[LabeledFrame]) -> Result<Self> {
        let mut pts: Vec<(f64, bool)> = entries
            .iter()
            .map(|e| (e.frame.energy_variance(), e.label.bit()))
            .collect();
        if !pts.iter().any(|p| p.1) || !pts.iter().any(|p| !p.1) {
            return Err(Error::SingleClassDataset);
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Everything above index i is called 1.
        let ones_total = pts.iter().filter(|p| p.1).count();
        let mut zeros_below = 0;
        let mut ones_below = 0;
        let mut best = (ones_total, 0usize);
        for (i, p) in pts.iter().enumerate() {
            if p.1 {
                ones_below += 1;
            } else {
                zeros_below += 1;
            }
            let correct = zeros_below + (ones_total - ones_below);
            if correct > best.0 && (i + 1 == pts.len() || pts[i + 1].0 > p.0) {
                best = (correct, i + 1);
            }
        }
        let threshold = match best.1 {
            0 => pts[0].0 - 1.0,
            k if k == pts.len() => pts[k - 1].0,
            k => 0.5 * (pts[k - 1].0 + pts[k].0),
        };
        Ok(Self { threshold })
    }
}

impl SymbolDecoder for VarianceThresholdDecoder {
    fn decode_frame(&self, frame: &Frame) -> Result<SymbolLabel> {
        if frame.len() < 2 {
            return Err(Error::FrameTooShort {
                n: frame.len(),
                required: 2,
            });
        }
        Ok(SymbolLabel::from_bit(energy_variance(frame.samples()) > self.threshold))
    }

    fn min_samples(&self) -> usize {
        2
    }
}

fn sync_matches(labels: &[SymbolLabel]) -> usize {
    labels.iter().zip(sync_symbols()).filter(|(a, b)| **a == *b).count()
}

/// First index where 8 consecutive decoded frames agree with the sync word
/// in at least 7 places.
pub fn detect_data_sync<D: SymbolDecoder + ?Sized>(frames: &[Frame], decoder: &D) -> Result<Option<usize>> {
    let labels = frames
        .iter()
        .map(|f| decoder.decode_frame(f))
        .collect::<Result<Vec<_>>>()?;
    if labels.len() < SYNC_SYMBOLS {
        return Ok(None);
    }
    Ok(labels
        .windows(SYNC_SYMBOLS)
        .position(|w| sync_matches(w) >= SYNC_MATCH_REQUIRED))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub start_us: i64,
    pub packet: Packet,
    pub symbols: Vec<SymbolLabel>,
    pub frames: Vec<Frame>,
    pub crc_pass: bool,
    /// Transmitted symbols, when the simulator knows them.
    pub symbol_truth: Option<Vec<SymbolLabel>>,
}

impl DecodeResult {
    pub fn symbol_errors(&self) -> Option<usize> {
        self.symbol_truth
            .as_ref()
            .map(|t| t.iter().zip(&self.symbols).filter(|(a, b)| a != b).count())
    }
}

pub fn decode_packet<D: SymbolDecoder + ?Sized>(frames: &[Frame], decoder: &D) -> Result<DecodeResult> {
    if frames.len() != PACKET_SYMBOLS {
        return Err(Error::LengthMismatch {
            expected: PACKET_SYMBOLS,
            got: frames.len(),
        });
    }
    let symbols = frames
        .iter()
        .map(|f| decoder.decode_frame(f))
        .collect::<Result<Vec<_>>>()?;
    let packet = Packet::from_symbols(&symbols)?;
    Ok(DecodeResult {
        start_us: frames[0].t_start_us(),
        crc_pass: crc16_verify(&packet.payload.to_be_bytes(), packet.crc),
        packet,
        symbols,
        frames: frames.to_vec(),
        symbol_truth: None,
    })
}

/// Appends every (frame, decoded symbol) pair of a CRC-passing packet.
/// Returns the number of frames appended.
pub fn harvest_passive(result: &DecodeResult, dp: &mut LabeledDataset) -> Result<usize> {
    if !result.crc_pass {
        return Ok(0);
    }
    // Sync tolerates one wrong symbol, so label it from the known word; the
    // rest is vouched for by the CRC.
    let labels = sync_symbols()
        .into_iter()
        .chain(result.symbols[SYNC_SYMBOLS..].iter().copied());
    for (frame, label) in result.frames.iter().zip(labels) {
        dp.push(LabeledFrame {
            frame: frame.clone(),
            label,
        })?;
    }
    Ok(result.frames.len())
}

/// Streaming receiver fed one symbol window at a time.
#[derive(Debug, Default)]
pub struct Receiver {
    search: VecDeque<(Frame, SymbolLabel)>,
    packet: Vec<Frame>,
}

impl Receiver {
    pub fn new() -> Self {
        Self::default()
    }

    /// True while frames of a started packet are being collected; the
    /// decoder must not change until the packet completes.
    pub fn is_mid_packet(&self) -> bool {
        !self.packet.is_empty()
    }

    /// Drops the sync search and any packet in progress.
    pub fn reset(&mut self) {
        self.search.clear();
        self.packet.clear();
    }

    /// A frame too short to decode is a gap, see [`Receiver::reset`].
    pub fn push<D: SymbolDecoder + ?Sized>(&mut self, frame: Frame, decoder: &D) -> Result<Option<DecodeResult>> {
        if frame.len() < decoder.min_samples() {
            self.reset();
            return Ok(None);
        }
        if self.is_mid_packet() {
            self.packet.push(frame);
            if self.packet.len() == PACKET_SYMBOLS {
                let frames = std::mem::take(&mut self.packet);
                return decode_packet(&frames, decoder).map(Some);
            }
            return Ok(None);
        }
        let label = decoder.decode_frame(&frame)?;
        self.search.push_back((frame, label));
        if self.search.len() > SYNC_SYMBOLS {
            self.search.pop_front();
        }
        if self.search.len() == SYNC_SYMBOLS {
            let labels: Vec<_> = self.search.iter().map(|e| e.1).collect();
            if sync_matches(&labels) >= SYNC_MATCH_REQUIRED {
                self.packet = self.search.drain(..).map(|e| e.0).collect();
            }
        }
        Ok(None)
    }
}
