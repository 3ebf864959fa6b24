//! Adaptive symbol decoding for packet-level cross-technology communication.
//!
//! The crate simulates a CSI/RSSI side channel that a foreign transmitter
//! modulates by switching its packets on and off, decodes the resulting
//! symbol windows with a small variable-length convolutional classifier,
//! and keeps that classifier current with two online-learning modes:
//! fine tuning on self-labeled frames from CRC-passing packets, and full
//! retraining from a Barker-delimited training sequence with permutation
//! augmentation.
//!
//! Module map:
//!
//! - [`types`]: samples, frames, labels, datasets, packets, CRC-16
//! - [`trace`]: JSONL trace files
//! - [`channel`]: seeded channel-dynamics simulator
//! - [`nn`]: convolutional decoder with analytic gradients and SGD
//! - [`preamble`]: Barker preamble construction and detection
//! - [`pipeline`]: sync detection, packet decoding, passive harvesting
//! - [`adaptation`]: PER monitor, fine tuning, augmentation, full training
//! - [`harness`]: closed-loop sessions, baselines, metrics, comparisons
//!
//! Data-parallel loops (batch gradients, holdout evaluation, Monte Carlo
//! sweeps) run on rayon when the `parallel` feature is enabled and fall
//! back to plain iterators otherwise; see [`par`].

// Negated float comparisons are how NaN gets rejected in validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod channel;
pub mod error;
pub mod harness;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod preamble;
pub mod trace;
pub mod types;

pub use error::{Error, Result};
