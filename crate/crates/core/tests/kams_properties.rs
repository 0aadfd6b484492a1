use kamsim::distributions::TruncatedNormalParams;
use kamsim::kams::{run_kams, BurstLaw, KamsConfig, OffLaw};

mod common;
use common::replay;

fn desk_like(seed: u64) -> KamsConfig {
    KamsConfig {
        n_sources: 100,
        service_rate: 8333.333333333334,
        peak_rate: 833.3333333333334,
        buffer_size: 30.0,
        rtt: 0.1,
        cwnd_law: BurstLaw::TruncatedNormal(TruncatedNormalParams::new(10.0, 4.0).unwrap()),
        off_law: OffLaw::Constant,
        sim_duration: 600.0,
        warmup_fraction: 0.2,
        seed,
        packet_size: 1500,
    }
}

#[test]
fn fluid_is_conserved_when_rebuilt_from_samples() {
    let cfg = desk_like(11);
    let run = run_kams(&cfg).unwrap();
    let r = replay(&run.trace, cfg.peak_rate, cfg.service_rate, cfg.buffer_size);
    let balance = (r.inflow - r.served - r.final_level - r.discarded).abs() / r.inflow;
    assert!(balance <= 1e-6, "rebuilt balance {balance:e}");
    assert!(r.worst_level_gap < 1e-6, "sample levels drift from the rebuilt path by {}", r.worst_level_gap);
    let l = run.ledger;
    let engine = (l.inflow - l.served - l.final_level - l.discarded).abs() / l.inflow;
    assert!(engine <= 1e-6, "engine ledger {engine:e}");
    assert!((r.inflow - l.inflow).abs() / l.inflow < 1e-6);
    assert!((r.discarded - l.discarded).abs() <= 1e-6 * l.inflow);
    assert!(r.discarded > 0.0);
}

#[test]
fn seeded_replay_is_bit_identical() {
    let a = run_kams(&desk_like(5)).unwrap();
    let b = run_kams(&desk_like(5)).unwrap();
    assert_eq!(a.trace.samples.len(), b.trace.samples.len());
    for (x, y) in a.trace.samples.iter().zip(&b.trace.samples) {
        assert_eq!(x.time.to_bits(), y.time.to_bits());
        assert_eq!(x.queue.to_bits(), y.queue.to_bits());
        assert_eq!(x.active, y.active);
    }
    assert_eq!(a.trace.overflow_intervals, b.trace.overflow_intervals);
    assert_eq!(a.ledger.discarded.to_bits(), b.ledger.discarded.to_bits());
    let c = run_kams(&desk_like(6)).unwrap();
    assert_ne!(a.trace.samples, c.trace.samples);
}

#[test]
fn mean_active_matches_renewal_reward() {
    for (law, off) in [
        (BurstLaw::TruncatedNormal(TruncatedNormalParams::new(10.0, 4.0).unwrap()), OffLaw::Constant),
        (BurstLaw::Exponential { mean: 12.0 }, OffLaw::Constant),
        (BurstLaw::HalfNormal { sigma: 15.0 }, OffLaw::Exponential),
    ] {
        let cfg = KamsConfig { cwnd_law: law, off_law: off, ..desk_like(21) };
        let run = run_kams(&cfg).unwrap();
        let on = law.mean() / cfg.peak_rate;
        let expected = cfg.n_sources as f64 * on / (on + cfg.rtt);
        let got = run.trace.mean_active(run.trace.window_start());
        assert!((got / expected - 1.0).abs() < 0.01, "{law:?}: {got} vs {expected}");
    }
}

#[test]
fn slopes_come_from_active_counts() {
    let cfg = desk_like(2);
    let run = run_kams(&cfg).unwrap();
    for w in run.trace.samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dt = b.time - a.time;
        let slope = a.active as f64 * cfg.peak_rate - cfg.service_rate;
        let free = (a.queue + slope * dt).clamp(0.0, cfg.buffer_size);
        // clamping can only stop the straight path at a boundary
        if free > 0.0 && free < cfg.buffer_size {
            assert!((b.queue - free).abs() < 1e-6, "{a:?} -> {b:?}");
        }
    }
}
