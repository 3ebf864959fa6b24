//! JSONL trace files.
//!
//! One JSON object per line, either a sample `{"t_us": 123, "amps": [..]}`
//! or a ground-truth annotation `{"t_us": 120, "truth": "sym1"}` marking the
//! start of a window. Lines are ordered by `t_us`; an annotation precedes
//! samples carrying the same timestamp.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SampleVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truth {
    #[serde(rename = "sym0")]
    Sym0,
    #[serde(rename = "sym1")]
    Sym1,
    #[serde(rename = "idle")]
    Idle,
    #[serde(rename = "preamble")]
    Preamble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub t_us: i64,
    pub truth: Truth,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub samples: Vec<SampleVector>,
    pub annotations: Vec<Annotation>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Sample { t_us: i64, amps: Vec<f64> },
    Truth { t_us: i64, truth: Truth },
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, other: Trace) {
        self.samples.extend(other.samples);
        self.annotations.extend(other.annotations);
    }

    pub fn end_us(&self) -> i64 {
        self.samples.last().map_or(0, |s| s.timestamp_us + 1)
    }

    /// Ground truth of the window containing `t_us`, if annotated.
    pub fn truth_at(&self, t_us: i64) -> Option<Truth> {
        let i = self.annotations.partition_point(|a| a.t_us <= t_us);
        i.checked_sub(1).map(|i| self.annotations[i].truth)
    }

    /// Samples with timestamps in `[from_us, to_us)`.
    pub fn slice_time(&self, from_us: i64, to_us: i64) -> &[SampleVector] {
        let lo = self.samples.partition_point(|s| s.timestamp_us < from_us);
        let hi = self.samples.partition_point(|s| s.timestamp_us < to_us);
        &self.samples[lo..hi.max(lo)]
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut ai = 0;
        for s in &self.samples {
            while ai < self.annotations.len() && self.annotations[ai].t_us <= s.timestamp_us {
                write_line(&mut w, &self.annotations[ai])?;
                ai += 1;
            }
            serde_json::to_writer(
                &mut w,
                &Line::Sample {
                    t_us: s.timestamp_us,
                    amps: s.values.clone(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        for a in &self.annotations[ai..] {
            write_line(&mut w, a)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut trace = Trace::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::MalformedTrace {
                line: i + 1,
                msg: e.to_string(),
            })?;
            match parsed {
                Line::Sample { t_us, amps } => {
                    if let Some(prev) = trace.samples.last() {
                        if t_us <= prev.timestamp_us || amps.len() != prev.dim() {
                            return Err(Error::MalformedTrace {
                                line: i + 1,
                                msg: "samples must be strictly increasing with constant width".into(),
                            });
                        }
                    }
                    let sv = SampleVector::new(amps, t_us).map_err(|e| Error::MalformedTrace {
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                    trace.samples.push(sv);
                }
                Line::Truth { t_us, truth } => trace.annotations.push(Annotation { t_us, truth }),
            }
        }
        Ok(trace)
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

fn write_line<W: Write>(w: &mut W, a: &Annotation) -> Result<()> {
    serde_json::to_writer(
        &mut *w,
        &Line::Truth {
            t_us: a.t_us,
            truth: a.truth,
        },
    )?;
    w.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn format_matches_wire_layout() {
        let t = Trace {
            samples: vec![SampleVector::new(vec![1.5, 2.0], 10).unwrap()],
            annotations: vec![Annotation {
                t_us: 10,
                truth: Truth::Sym1,
            }],
        };
        let s = String::from_utf8(t.to_jsonl_bytes()).unwrap();
        assert_eq!(
            s,
            "{\"t_us\":10,\"truth\":\"sym1\"}\n{\"t_us\":10,\"amps\":[1.5,2.0]}\n"
        );
    }

    #[test]
    fn rejects_garbage() {
        let err = Trace::read_jsonl("{\"t_us\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedTrace { line: 1, .. }));
        let err = Trace::read_jsonl("{\"t_us\":5,\"amps\":[1]}\n{\"t_us\":5,\"amps\":[1]}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedTrace { line: 2, .. }));
    }

    #[test]
    fn truth_lookup() {
        let t = Trace {
            samples: vec![],
            annotations: vec![
                Annotation {
                    t_us: 0,
                    truth: Truth::Idle,
                },
                Annotation {
                    t_us: 4000,
                    truth: Truth::Sym1,
                },
            ],
        };
        assert_eq!(t.truth_at(3999), Some(Truth::Idle));
        assert_eq!(t.truth_at(4000), Some(Truth::Sym1));
        assert_eq!(t.truth_at(-1), None);
    }

    proptest! {
        #[test]
        fn jsonl_round_trip_is_exact(
            amps in prop::collection::vec(prop::collection::vec(0.0f64..1e3, 3), 1..20),
            marks in prop::collection::vec(0usize..4, 0..5),
        ) {
            let samples: Vec<_> = amps.into_iter().enumerate()
                .map(|(i, v)| SampleVector::new(v, i as i64 * 7).unwrap()).collect();
            let truths = [Truth::Sym0, Truth::Sym1, Truth::Idle, Truth::Preamble];
            let annotations = marks.iter().enumerate()
                .map(|(i, &m)| Annotation { t_us: i as i64 * 13, truth: truths[m] }).collect();
            let t = Trace { samples, annotations };
            let bytes = t.to_jsonl_bytes();
            let back = Trace::read_jsonl(bytes.as_slice()).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.to_jsonl_bytes(), bytes);
        }
    }
}
