//! End-to-end runs of the session harness on the channel presets.

use ctc_adapt::harness::{
    compare, packets_csv, parse_packets_csv, run_experiment, DecoderKind, ExperimentConfig, PacketRecord, RunResult,
};
use ctc_adapt::types::PACKET_SYMBOLS;

fn run(scenario: &str, decoder: DecoderKind, seed: u64, ms: u64) -> RunResult {
    run_experiment(&ExperimentConfig::preset(scenario, decoder, seed, ms))
        .unwrap()
        .1
}

fn ser(records: &[&PacketRecord]) -> f64 {
    let errors: usize = records.iter().map(|r| r.symbol_errors).sum();
    errors as f64 / (records.len() * PACKET_SYMBOLS) as f64
}

fn after(r: &RunResult, t_us: i64) -> Vec<&PacketRecord> {
    r.packets.iter().filter(|p| p.t_us >= t_us).collect()
}

#[test]
fn static_channel_adaptive_ser_is_low() {
    let r = run("static", DecoderKind::Adaptive, 1, 30_000);
    assert!(r.report.overall_ser <= 0.1, "{}", r.report.overall_ser);
    assert!(r.report.adaptation.triggers_us.is_empty());
}

#[test]
fn stale_model_after_jump_loses_symbols_and_sync() {
    let r = run("abrupt", DecoderKind::FrozenModel, 2, 45_000);
    let jump = *r.report.segment_starts_us.last().unwrap();
    let post = after(&r, jump);
    assert!(ser(&post) > 0.25, "post-jump SER {}", ser(&post));
    // Missed packets are scored as all-wrong and never pass the CRC.
    let found = post
        .iter()
        .filter(|p| p.crc_pass || p.symbol_errors < PACKET_SYMBOLS)
        .count();
    assert!(
        (found as f64) < 0.2 * post.len() as f64,
        "{found} of {} packets found",
        post.len()
    );
    let pre: Vec<_> = r.packets.iter().filter(|p| p.t_us < jump).collect();
    assert!(ser(&pre) < 0.1);
}

#[test]
fn fine_tuning_tracks_slow_drift() {
    let cfgs: Vec<_> = [DecoderKind::Adaptive, DecoderKind::FrozenModel]
        .iter()
        .map(|&d| {
            let mut c = ExperimentConfig::preset("drift", d, 6, 300_000);
            // Fine-tuning only: the failure monitor never fires.
            c.session.per.consecutive_required = 100_000;
            c
        })
        .collect();
    let cmp = compare(&cfgs).unwrap();
    let (adaptive, frozen) = (&cmp.runs[0], &cmp.runs[1]);
    assert!(adaptive.report.adaptation.triggers_us.is_empty());
    assert!(adaptive.report.adaptation.fine_tune_steps > 0);
    let worst = adaptive.rolling.iter().map(|p| p.ser).fold(0.0, f64::max);
    assert!(worst <= 0.1, "adaptive rolling SER peaked at {worst}");
    let end = frozen.rolling.last().unwrap().ser;
    assert!(end > 0.2, "frozen rolling SER at drift end {end}");
}

#[test]
fn fine_tuning_does_not_degrade_a_stationary_channel() {
    // 100 packet slots after the bootstrap sequence.
    let cmp = compare(&[
        ExperimentConfig::preset("static", DecoderKind::Adaptive, 3, 45_000),
        ExperimentConfig::preset("static", DecoderKind::FrozenModel, 3, 45_000),
    ])
    .unwrap();
    let (adaptive, frozen) = (&cmp.runs[0], &cmp.runs[1]);
    assert!(adaptive.report.packets_sent >= 100, "{}", adaptive.report.packets_sent);
    assert!(adaptive.report.adaptation.fine_tune_steps > 0);
    // Both models scored on the last 20 packets of the shared trace.
    let tail = |r: &RunResult| {
        let p: Vec<_> = r.packets.iter().rev().take(20).collect();
        1.0 - ser(&p)
    };
    assert!(
        tail(adaptive) >= tail(frozen) - 0.02,
        "{} vs {}",
        tail(adaptive),
        tail(frozen)
    );
    assert!(adaptive.report.overall_ser <= frozen.report.overall_ser + 0.02);
}

#[test]
fn reports_agree_with_an_independent_recount() {
    let (session, r) = run_experiment(&ExperimentConfig::preset("walking", DecoderKind::Adaptive, 5, 30_000)).unwrap();
    assert_eq!(r.report.packets_sent, session.packets.len());
    assert_eq!(r.packets.len(), session.packets.len());
    let errors: usize = r.packets.iter().map(|p| p.symbol_errors).sum();
    assert_eq!(r.report.symbol_errors, errors);
    assert_eq!(r.report.symbols_sent, session.packets.len() * PACKET_SYMBOLS);
    assert_eq!(r.report.overall_ser, errors as f64 / r.report.symbols_sent as f64);
    assert_eq!(
        r.report.packets_crc_pass,
        r.packets.iter().filter(|p| p.crc_pass).count()
    );
    let delivered = r.packets.iter().filter(|p| p.crc_pass && p.symbol_errors == 0).count();
    let secs = (r.report.duration_us - r.report.data_start_us) as f64 / 1e6;
    assert!((r.report.throughput_bps - delivered as f64 * 64.0 / secs).abs() < 1e-9);
    assert_eq!(parse_packets_csv(&packets_csv(&r.packets)).unwrap(), r.packets);
    let i = &r.report.interrupt;
    assert_eq!(i.t_i_us, i.t_collect_us + i.t_train_us + i.t_failure_us);
}

#[test]
fn compare_is_paired_and_order_independent() {
    let cfg = |d| ExperimentConfig::preset("abrupt", d, 7, 30_000);
    let ab = compare(&[
        cfg(DecoderKind::Adaptive),
        cfg(DecoderKind::FrozenModel),
        cfg(DecoderKind::VarianceThreshold),
    ])
    .unwrap();
    let ba = compare(&[
        cfg(DecoderKind::VarianceThreshold),
        cfg(DecoderKind::FrozenModel),
        cfg(DecoderKind::Adaptive),
    ])
    .unwrap();
    assert_eq!(ab.session.trace, ba.session.trace);
    for r in &ab.runs {
        let twin = ba.runs.iter().find(|x| x.report.decoder == r.report.decoder).unwrap();
        assert_eq!(r.report, twin.report);
        assert_eq!(r.packets, twin.packets);
    }
    let order: Vec<_> = ba.table.rows.iter().map(|r| r.decoder).collect();
    assert_eq!(
        order,
        [
            DecoderKind::VarianceThreshold,
            DecoderKind::FrozenModel,
            DecoderKind::Adaptive
        ]
    );
    // A single decoder degenerates to its own run.
    let one = compare(&[cfg(DecoderKind::FrozenModel)]).unwrap();
    let solo = run_experiment(&cfg(DecoderKind::FrozenModel)).unwrap().1;
    assert_eq!(one.runs[0].report, solo.report);
    assert!(one.table.pairs.is_empty());
}

#[test]
fn abrupt_scenario_recovers_after_full_training() {
    let r = run("abrupt", DecoderKind::Adaptive, 3, 45_000);
    let jump = *r.report.segment_starts_us.last().unwrap();
    let trigger = *r.report.adaptation.triggers_us.iter().find(|&&t| t >= jump).unwrap();
    let w = r.report.rolling_window_us;
    let back = r
        .rolling
        .iter()
        .find(|p| p.t_us - w >= jump && p.t_us >= trigger && p.ser <= 0.1)
        .unwrap();
    assert!(
        back.t_us - trigger <= 10_000_000,
        "recovered {} us after trigger",
        back.t_us - trigger
    );
}
