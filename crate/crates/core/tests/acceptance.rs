//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ctc_adapt::adaptation::{augment, AugmentConfig};
use ctc_adapt::channel::{generate_trace, preset, symbol_schedule};
use ctc_adapt::harness::{compare, write_comparison, DecoderKind, ExperimentConfig, RunResult};
use ctc_adapt::nn::{
    accuracy, fit, forward, init_params, loss_and_grad, split_holdout, EpochSampler, InputNorm, ModelConfig,
    ModelParams, TrainConfig,
};
use ctc_adapt::par::Exec;
use ctc_adapt::preamble::{
    binarize, build_training_schedule, correlation_profile, extract_active_dataset, locate_training_sequence,
    BarkerCode, PreambleConfig, TrainingSequenceSpec,
};
use ctc_adapt::types::{Frame, LabeledFrame, Packet, SymbolLabel, PACKET_SYMBOLS, SYNC_SYMBOLS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn bits(rng: &mut impl Rng, n: usize) -> Vec<SymbolLabel> {
    (0..n).map(|_| SymbolLabel::from_bit(rng.random())).collect()
}

/// Expected size from the layer shapes: per width h, K filters of h*D
/// weights plus a bias; then a dense layer over 3K features into 2 classes.
fn param_oracle(d: usize) -> usize {
    let k = 64;
    [3, 4, 5].iter().map(|h| k * (h * d + 1)).sum::<usize>() + 3 * k * 2 + 2
}

fn c1_param_counts() -> Outcome {
    let csi = ModelConfig::csi_default().param_count();
    let rssi = ModelConfig::rssi_default().param_count();
    let csi_live = init_params(&ModelConfig::csi_default(), 1).unwrap().len();
    let rssi_live = init_params(&ModelConfig::rssi_default(), 1).unwrap().len();
    outcome(
        csi == 9794
            && rssi == 1346
            && csi_live == csi
            && rssi_live == rssi
            && param_oracle(12) == 9794
            && param_oracle(1) == 1346,
        format!("csi {csi} rssi {rssi}"),
    )
}

fn random_frame(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Frame {
    let rows = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Frame::from_rows(rows, 0, 4000).unwrap()
}

fn batch_loss(params: &ModelParams, batch: &[LabeledFrame]) -> f64 {
    batch
        .iter()
        .map(|e| -forward(params, &e.frame).unwrap().probs[e.label.index()].ln())
        .sum::<f64>()
        / batch.len() as f64
}

fn c2_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut checked = 0;
    for case in 0..60 {
        let d = if case % 2 == 0 { 1 } else { 12 };
        let cfg = ModelConfig::with_input_dim(d);
        let mut params = init_params(&cfg, case).unwrap();
        // Nonzero biases so every code path carries gradient.
        for v in params.values_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let batch: Vec<LabeledFrame> = (0..rng.random_range(1..=3))
            .map(|_| {
                let n = rng.random_range(5..=16);
                LabeledFrame {
                    frame: random_frame(&mut rng, d, n),
                    label: SymbolLabel::from_bit(rng.random()),
                }
            })
            .collect();
        let analytic = loss_and_grad(&params, &batch).unwrap().grad;
        let n = params.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(150);
        // Always include the dense layer.
        idx.extend(n - 3 * 64 * 2 - 2..n);
        for &i in &idx {
            let mut plus = params.clone();
            plus.values_mut()[i] += eps;
            let mut minus = params.clone();
            minus.values_mut()[i] -= eps;
            let fd = (batch_loss(&plus, &batch) - batch_loss(&minus, &batch)) / (2.0 * eps);
            let a = analytic.values()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-7);
            worst = worst.max(rel);
            checked += 1;
        }
        cases += 1;
    }
    let took = start.elapsed();
    outcome(
        worst <= 1e-4 && cases >= 50 && took < Duration::from_secs(60),
        format!("{cases} cases, {checked} coordinates, max rel err {worst:.2e}, {took:.1?}"),
    )
}

fn c3_barker() -> Outcome {
    let literal: [i8; 11] = [1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1];
    let code = BarkerCode::default();
    let hand = |s: usize| -> i32 { (0..11 - s).map(|j| (literal[j] * literal[j + s]) as i32).sum() };
    let c0 = code.autocorrelation(0);
    let sidelobes_ok = (1..11).all(|v| hand(v).abs() <= 1 && code.autocorrelation(v) == hand(v));
    let flips_ok = (0..11).all(|j| {
        let mut seq = literal;
        seq[j] = -seq[j];
        ctc_adapt::preamble::correlate(&seq, &code).unwrap() == 9
    });
    outcome(
        *code.chips() == literal && c0 == 11 && hand(0) == 11 && sidelobes_ok && flips_ok,
        format!(
            "c0 {c0}, max sidelobe {}",
            (1..11).map(|v| hand(v).abs()).max().unwrap()
        ),
    )
}

fn c4_preamble() -> Outcome {
    let start = Instant::now();
    let cfg = PreambleConfig::default();
    let spec = TrainingSequenceSpec {
        t_g_us: 400_000,
        ..Default::default()
    };
    let trials = 300;
    let mut located = 0;
    for trial in 0..trials {
        let scenario = ["static", "walking"][trial % 2];
        let (sc, mut m) = preset(scenario, 3000, 100 + trial as u64).unwrap();
        m.chip_flip_prob = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(trial as u64);
        // Random data, a short idle gap, the sequence, more data. Sender
        // slots sit on the receiver's chip grid, as in the session harness.
        let lead = 2 * rng.random_range(25..125);
        let mut sched = symbol_schedule(0, m.t_s_us, &bits(&mut rng, lead));
        let t0 = lead as i64 * m.t_s_us + rng.random_range(2..6) * cfg.t_p_us;
        sched.extend(build_training_schedule(&spec, t0).unwrap());
        let after = t0 + spec.duration_us() + 2 * cfg.t_p_us;
        sched.extend(symbol_schedule(after, m.t_s_us, &bits(&mut rng, 100)));
        let trace = generate_trace(&sc, &m, &sched).unwrap();
        let found = locate_training_sequence(&trace.samples, 0, trace.end_us(), &spec, &cfg).unwrap();
        if found.is_some_and(|f| f.start_us == t0 + spec.preamble_us()) {
            located += 1;
        }
    }
    let acc = located as f64 / trials as f64;

    // Preamble-free traffic: data packets separated by idle gaps.
    let mut scanned = 0;
    let mut alarms = 0;
    for (i, scenario) in ["static", "walking", "moving-rx", "abrupt"].iter().enumerate() {
        let (sc, m) = preset(scenario, 30_000, 7 + i as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(50 + i as u64);
        let mut sched = Vec::new();
        let mut t = 100_000;
        while t + 400_000 < 30_000_000 {
            let p = Packet::new(rng.random()).to_symbols();
            sched.extend(symbol_schedule(t, m.t_s_us, &p));
            t += PACKET_SYMBOLS as i64 * m.t_s_us + rng.random_range(2..12) * cfg.t_p_us;
        }
        let trace = generate_trace(&sc, &m, &sched).unwrap();
        let bin = binarize(&trace.samples, 0, trace.end_us(), cfg.t_p_us, &cfg.threshold).unwrap();
        let profile = correlation_profile(&bin.chips, &BarkerCode::default());
        scanned += profile.len();
        alarms += profile.iter().filter(|&&c| c >= cfg.corr_threshold).count();
    }
    let fa = alarms as f64 / scanned as f64;
    let took = start.elapsed();
    outcome(
        acc >= 0.90 && scanned >= 10_000 && fa <= 0.01 && took < Duration::from_secs(120),
        format!("accuracy {acc:.3} ({located}/{trials}), false alarms {alarms}/{scanned} = {fa:.4}, {took:.1?}"),
    )
}

/// First rolling point entirely after `after_us` and at or past `trigger_us`
/// whose SER is within `limit`; seconds after the trigger.
fn recovery_s(run: &RunResult, after_us: i64, trigger_us: i64, limit: f64) -> Option<f64> {
    let w = run.report.rolling_window_us;
    run.rolling
        .iter()
        .find(|p| p.t_us - w >= after_us && p.t_us >= trigger_us && p.ser <= limit)
        .map(|p| (p.t_us - trigger_us) as f64 / 1e6)
}

fn run_of(runs: &[RunResult], d: DecoderKind) -> &RunResult {
    runs.iter().find(|r| r.report.decoder == d).unwrap()
}

fn four_phase(seed: u64) -> Vec<ExperimentConfig> {
    DecoderKind::ALL
        .iter()
        .map(|&d| ExperimentConfig::preset("four-phase", d, seed, 120_000))
        .collect()
}

fn c5_four_phase() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for seed in [1, 2, 3] {
        let cmp = compare(&four_phase(seed)).unwrap();
        let adaptive = run_of(&cmp.runs, DecoderKind::Adaptive);
        let frozen = run_of(&cmp.runs, DecoderKind::FrozenModel);
        let abrupt = *adaptive.report.segment_starts_us.last().unwrap();
        let w = frozen.report.rolling_window_us;
        let post: Vec<f64> = frozen
            .rolling
            .iter()
            .filter(|p| p.t_us - w >= abrupt)
            .map(|p| p.ser)
            .collect();
        let frozen_post = post.iter().sum::<f64>() / post.len().max(1) as f64;
        let trigger = adaptive
            .report
            .adaptation
            .triggers_us
            .iter()
            .copied()
            .find(|&t| t >= abrupt);
        let rec = trigger.and_then(|t| recovery_s(adaptive, abrupt, t, 0.10));
        let a = adaptive.report.overall_ser;
        let f = frozen.report.overall_ser;
        let reduction = if f > 0.0 { (f - a) / f } else { 0.0 };
        let ok = frozen_post > 0.25 && a <= 0.10 && rec.is_some_and(|s| s <= 10.0) && reduction >= 0.5;
        pass &= ok;
        detail.push(format!(
            "seed {seed}: frozen post-abrupt {frozen_post:.3}, adaptive {a:.4} vs frozen {f:.4} ({:.0}% lower), recovery {}",
            reduction * 100.0,
            rec.map_or("none".to_string(), |s| format!("{s:.1}s")),
        ));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(300);
    detail.push(format!("{took:.1?}"));
    outcome(pass, detail.join("; "))
}

/// Active dataset from one training sequence with block length `t_g_us`.
fn active_frames(scenario: &str, seed: u64, t_g_us: i64) -> Vec<LabeledFrame> {
    let spec = TrainingSequenceSpec {
        t_g_us,
        ..Default::default()
    };
    let t0 = 160_000;
    let dur = ((t0 + spec.duration_us()) / 1000 + 200) as u64;
    let (sc, m) = preset(scenario, dur, seed).unwrap();
    let trace = generate_trace(&sc, &m, &build_training_schedule(&spec, t0).unwrap()).unwrap();
    extract_active_dataset(&trace.samples, &spec, t0 + spec.preamble_us())
        .unwrap()
        .to_vec()
}

fn train_on(
    train: &[LabeledFrame],
    holdout: &[LabeledFrame],
    cfg: &TrainConfig,
    augmented: bool,
    exec: Exec,
) -> ModelParams {
    let model = ModelConfig::csi_default();
    let init = init_params(&model, cfg.rng_seed)
        .unwrap()
        .with_input_norm(InputNorm::fit(model.input_dim, train.iter().map(|e| &e.frame)))
        .unwrap();
    let mut data = train.to_vec();
    if augmented {
        let extra = augment(
            train,
            &AugmentConfig {
                rng_seed: cfg.rng_seed,
                ..Default::default()
            },
        )
        .unwrap();
        data.extend(extra.iter().cloned());
    }
    let mut src = EpochSampler::new(&data, cfg.rng_seed);
    fit(&init, &mut src, holdout, cfg, exec).unwrap().params
}

/// 5% of the pool with augmentation against all of it without; both models
/// are scored on the same held-out frames.
fn augmentation_gap(pool: &[LabeledFrame], test: &[LabeledFrame], seed: u64) -> (f64, f64) {
    let mut small: Vec<LabeledFrame> = Vec::new();
    for bit in [true, false] {
        small.extend(
            pool.iter()
                .filter(|e| e.label.bit() == bit)
                .take(pool.len() / 40)
                .cloned(),
        );
    }
    let (small_train, small_val) = split_holdout(&small, 0.2, seed);
    let (full_train, full_val) = split_holdout(pool, 0.2, seed);
    let cfg = TrainConfig {
        rng_seed: seed,
        ..Default::default()
    };
    let a = train_on(&small_train, &small_val, &cfg, true, Exec::default());
    let b = train_on(&full_train, &full_val, &cfg, false, Exec::default());
    (
        accuracy(&a, test, Exec::default()).unwrap(),
        accuracy(&b, test, Exec::default()).unwrap(),
    )
}

fn c6_augmentation() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = f64::MIN;
    let mut detail = Vec::new();
    let mut contiguous = Vec::new();
    for seed in [1u64, 2, 3] {
        let frames = active_frames("static", seed, 4_000_000);
        // The pool comes back shuffled, so its first 5% per class is a
        // random subset of the dataset.
        let (mut pool, test) = split_holdout(&frames, 0.2, seed);
        let (a, b) = augmentation_gap(&pool, &test, seed);
        worst = worst.max(b - a);
        detail.push(format!(
            "seed {seed}: {} frames + aug {a:.3} vs {} frames {b:.3}",
            pool.len() / 20,
            pool.len()
        ));
        // Reported only: the earliest 5% in time instead.
        pool.sort_by_key(|e| e.frame.t_start_us());
        let (a, b) = augmentation_gap(&pool, &test, seed);
        contiguous.push(format!("{:+.3}", a - b));
    }
    let took = start.elapsed();
    detail.push(format!("earliest-5% gaps {}", contiguous.join(" ")));
    detail.push(format!("{took:.1?}"));
    outcome(worst <= 0.03 && took < Duration::from_secs(180), detail.join("; "))
}

fn c7_training_time() -> Outcome {
    let mut worst = Duration::ZERO;
    let mut pass = true;
    let mut detail = Vec::new();
    for (scenario, seed) in [("static", 1u64), ("walking", 2), ("moving-rx", 3)] {
        let frames = active_frames(scenario, seed, 1_000_000);
        let cfg = TrainConfig {
            target_accuracy: 0.9,
            rng_seed: seed,
            ..Default::default()
        };
        let start = Instant::now();
        let (train, holdout) = split_holdout(&frames, cfg.holdout_fraction, seed);
        let p = train_on(&train, &holdout, &cfg, true, Exec::Sequential);
        let took = start.elapsed();
        let acc = accuracy(&p, &holdout, Exec::Sequential).unwrap();
        pass &= acc >= 0.9 && took <= Duration::from_secs(5);
        worst = worst.max(took);
        detail.push(format!("{scenario}: {acc:.3} in {took:.2?}"));
    }
    detail.push(format!("slowest {worst:.2?}"));
    outcome(pass, detail.join("; "))
}

/// Bitwise CRC-16/CCITT-FALSE, kept apart from the library code.
fn crc_oracle(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in bytes {
        for i in (0..8).rev() {
            let bit = (b >> i) & 1 == 1;
            let top = crc & 0x8000 != 0;
            crc <<= 1;
            if bit != top {
                crc ^= 0x1021;
            }
        }
    }
    crc
}

fn c8_crc(runs: &[RunResult]) -> Outcome {
    let leaked: u64 = runs
        .iter()
        .map(|r| r.report.adaptation.harvested_from_failing_packets)
        .sum();
    // Every harvested frame belongs to a whole passing packet.
    let whole = runs.iter().all(|r| {
        let h = r.report.adaptation.harvested_frames as usize;
        h.is_multiple_of(PACKET_SYMBOLS) && h / PACKET_SYMBOLS <= r.report.packets_crc_pass + r.report.spurious_packets
    });
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let trials = 100_000;
    let mut undetected = 0;
    let mut oracle_agrees = true;
    for _ in 0..trials {
        let sent = Packet::new(rng.random());
        oracle_agrees &= crc_oracle(&sent.payload.to_be_bytes()) == sent.crc;
        let mut sym = sent.to_symbols();
        let flips = rng.random_range(1..=8);
        let mut pos: Vec<usize> = (SYNC_SYMBOLS..PACKET_SYMBOLS).collect();
        pos.shuffle(&mut rng);
        for &i in &pos[..flips] {
            sym[i] = SymbolLabel::from_bit(!sym[i].bit());
        }
        let got = Packet::from_symbols(&sym).unwrap();
        if got.is_valid() && got != sent {
            undetected += 1;
        }
    }
    outcome(
        leaked == 0 && whole && undetected <= 10 && oracle_agrees,
        format!("frames from failing packets {leaked}, undetected {undetected}/{trials}"),
    )
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn c9_determinism() -> Outcome {
    let cfgs: Vec<_> = DecoderKind::ALL
        .iter()
        .map(|&d| ExperimentConfig::preset("abrupt", d, 4, 45_000))
        .collect();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_comparison(a.path(), &compare(&cfgs).unwrap()).unwrap();
    write_comparison(b.path(), &compare(&cfgs).unwrap()).unwrap();
    let fa = files(a.path());
    let fb = files(b.path());
    let has_ck = fa.iter().any(|(n, _)| n.ends_with("checkpoint.json"));
    let has_trace = fa.iter().any(|(n, _)| n.ends_with("trace.jsonl"));
    outcome(
        fa == fb && has_ck && has_trace,
        format!(
            "{} files, {} bytes compared",
            fa.len(),
            fa.iter().map(|f| f.1.len()).sum::<usize>()
        ),
    )
}

fn c10_interrupt(runs: &[RunResult]) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for r in runs {
        let i = &r.report.interrupt;
        pass &= i.t_i_us == i.t_collect_us + i.t_train_us + i.t_failure_us;
        if r.report.decoder == DecoderKind::Adaptive {
            pass &= i.t_collect_us > 0 && i.t_train_us > 0 && i.t_failure_us > 0;
            detail.push(format!(
                "seed {}: T_I {} = {} + {} + {}",
                r.report.seed, i.t_i_us, i.t_collect_us, i.t_train_us, i.t_failure_us
            ));
        }
    }
    outcome(pass, detail.join("; "))
}

fn main() -> ExitCode {
    let abrupt: Vec<RunResult> = [1u64, 2]
        .iter()
        .flat_map(|&seed| {
            let cfgs: Vec<_> = [DecoderKind::Adaptive, DecoderKind::FrozenModel]
                .iter()
                .map(|&d| ExperimentConfig::preset("abrupt", d, seed, 60_000))
                .collect();
            compare(&cfgs).unwrap().runs
        })
        .collect();
    let results = [
        ("1 parameter counts", c1_param_counts()),
        ("2 gradient check", c2_gradient_check()),
        ("3 barker properties", c3_barker()),
        ("4 preamble detection", c4_preamble()),
        ("5 four-phase adaptation", c5_four_phase()),
        ("6 augmentation", c6_augmentation()),
        ("7 training time", c7_training_time()),
        ("8 crc harvesting", c8_crc(&abrupt)),
        ("9 determinism", c9_determinism()),
        ("10 interrupt accounting", c10_interrupt(&abrupt)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
