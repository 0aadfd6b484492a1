//! Event-driven simulation of the fluid on-off (KAMS) queue.
//!
//! `N` independent sources alternate between an on period, emitting at the
//! peak rate for `burst / peak_rate` seconds, and an off period of one round
//! trip. The buffer integrates `k ν - C` between transitions and is clamped
//! to `[0, B]`; fluid that arrives at a full buffer is discarded.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{open_unit, TruncatedNormalParams};
use crate::trace::{Occupancy, QueueSample, QueueTrace, TraceKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KamsError {
    #[error("negative time step {0}")]
    NegativeDt(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Burst sizes below this are redrawn so that every on period has a
/// positive length.
pub const MIN_BURST: f64 = 1.0e-6;

/// Law of the burst size (packets) that sets each on period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BurstLaw {
    TruncatedNormal(TruncatedNormalParams),
    Exponential { mean: f64 },
    /// Truncated normal with location 0.
    HalfNormal { sigma: f64 },
}

impl BurstLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BurstLaw::TruncatedNormal(p) => p.sample(rng),
            BurstLaw::Exponential { mean } => -mean * open_unit(rng).ln(),
            BurstLaw::HalfNormal { sigma } => TruncatedNormalParams::half_normal(sigma)
                .map(|p| p.sample(rng))
                .unwrap_or(0.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            BurstLaw::TruncatedNormal(p) => p.mean(),
            BurstLaw::Exponential { mean } => mean,
            BurstLaw::HalfNormal { sigma } => sigma * (2.0 / std::f64::consts::PI).sqrt(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            BurstLaw::TruncatedNormal(p) => TruncatedNormalParams::new(p.mu(), p.sigma())
                .map(|_| ())
                .map_err(|e| e.to_string()),
            BurstLaw::Exponential { mean } if !(mean.is_finite() && mean > 0.0) => {
                Err(format!("exponential burst mean must be > 0, got {mean}"))
            }
            BurstLaw::HalfNormal { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
                Err(format!("half-normal sigma must be > 0, got {sigma}"))
            }
            _ => Ok(()),
        }
    }
}

/// Law of the off period, with mean equal to the round trip time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffLaw {
    #[default]
    Constant,
    Exponential,
    /// The rest of a round trip that began with the preceding burst.
    RttMinusBurst,
}

/// Draws one on period in seconds: a burst from `law` divided by the peak rate.
pub fn on_duration<R: Rng + ?Sized>(law: &BurstLaw, peak_rate: f64, rng: &mut R) -> f64 {
    let burst = loop {
        let w = law.sample(rng);
        if w >= MIN_BURST {
            break w;
        }
    };
    burst / peak_rate
}

/// Draws one off period in seconds; `last_on` is the on period just ended.
pub fn off_duration<R: Rng + ?Sized>(law: OffLaw, rtt: f64, last_on: f64, rng: &mut R) -> f64 {
    match law {
        OffLaw::Constant => rtt,
        OffLaw::Exponential => -rtt * open_unit(rng).ln(),
        OffLaw::RttMinusBurst => (rtt - last_on).max(rtt * 1e-9),
    }
}

fn default_warmup() -> f64 {
    0.2
}

fn default_packet_size() -> u32 {
    1500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KamsConfig {
    pub n_sources: usize,
    /// C, packets/s.
    pub service_rate: f64,
    /// ν, packets/s.
    pub peak_rate: f64,
    /// B, packets.
    pub buffer_size: f64,
    /// Off-period mean, seconds.
    pub rtt: f64,
    pub cwnd_law: BurstLaw,
    #[serde(default)]
    pub off_law: OffLaw,
    pub sim_duration: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Bytes; only used when converting link speeds given in bits/s.
    #[serde(default = "default_packet_size")]
    pub packet_size: u32,
}

impl KamsConfig {
    pub fn validate(&self) -> Result<(), KamsError> {
        let mut problems = Vec::new();
        if self.n_sources == 0 {
            problems.push("n_sources must be positive".to_string());
        }
        for (v, name) in [
            (self.service_rate, "service_rate"),
            (self.peak_rate, "peak_rate"),
            (self.buffer_size, "buffer_size"),
            (self.rtt, "rtt"),
            (self.sim_duration, "sim_duration"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            problems.push(format!("warmup_fraction must lie in [0, 1), got {}", self.warmup_fraction));
        }
        if self.packet_size == 0 {
            problems.push("packet_size must be positive".to_string());
        }
        if let Err(e) = self.cwnd_law.validate() {
            problems.push(e);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(KamsError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Converts a link speed in bits/s into packets/s.
pub fn bits_to_packets(bits_per_sec: f64, packet_size: u32) -> f64 {
    bits_per_sec / (8.0 * packet_size as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceState {
    pub phase: Phase,
    /// Absolute time of the next transition.
    pub phase_end: f64,
}

/// Outcome of integrating the queue over one inter-event interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueueStep {
    pub level: f64,
    /// Fluid discarded at the full buffer.
    pub overflow: f64,
    /// Fluid served.
    pub served: f64,
    /// Time from the start of the interval until a boundary was reached;
    /// equals `dt` when the trajectory stays inside `(0, B)`.
    pub free_time: f64,
    /// Time spent pinned at `B`.
    pub full_time: f64,
    /// Time spent pinned at 0.
    pub empty_time: f64,
}

/// Integrates the queue over `dt` with `active` sources on.
pub fn advance_queue(q: f64, active: usize, dt: f64, cfg: &KamsConfig) -> Result<QueueStep, KamsError> {
    integrate(q, active as f64 * cfg.peak_rate, cfg.service_rate, cfg.buffer_size, dt)
}

/// Piecewise-exact queue integration for a constant inflow rate.
pub fn integrate(q: f64, inflow: f64, service: f64, buffer: f64, dt: f64) -> Result<QueueStep, KamsError> {
    if dt < 0.0 || dt.is_nan() {
        return Err(KamsError::NegativeDt(dt));
    }
    let rate = inflow - service;
    let mut step = QueueStep {
        level: q,
        free_time: dt,
        served: service * dt,
        ..QueueStep::default()
    };
    if rate > 0.0 {
        let hit = (buffer - q) / rate;
        if dt <= hit {
            step.level = (q + rate * dt).min(buffer);
        } else {
            step.level = buffer;
            step.free_time = hit;
            step.full_time = dt - hit;
            step.overflow = rate * step.full_time;
        }
    } else if rate < 0.0 {
        let hit = q / -rate;
        if dt <= hit {
            step.level = (q + rate * dt).max(0.0);
        } else {
            step.level = 0.0;
            step.free_time = hit;
            step.empty_time = dt - hit;
            step.served = service * hit + inflow * step.empty_time;
        }
    } else if q >= buffer {
        step.free_time = 0.0;
        step.full_time = dt;
    } else if q <= 0.0 {
        step.free_time = 0.0;
        step.empty_time = dt;
    }
    Ok(step)
}

/// Totals needed to check fluid conservation over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FluidLedger {
    pub inflow: f64,
    pub served: f64,
    pub discarded: f64,
    pub final_level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KamsRun {
    pub trace: QueueTrace,
    pub ledger: FluidLedger,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    source: usize,
}

impl Eq for Event {}

impl Ord for Event {
    // min-heap on time, ties broken by source index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.source.cmp(&self.source))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Random stream of one source, independent of how many sources run.
pub fn source_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Integrator {
    level: f64,
    last_time: f64,
    window_start: f64,
    buffer: f64,
    occupancy: Occupancy,
    ledger: FluidLedger,
    full_since: Option<f64>,
    overflow_intervals: Vec<(f64, f64)>,
}

impl Integrator {
    fn advance_to(&mut self, time: f64, active: usize, cfg: &KamsConfig) -> Result<(), KamsError> {
        if self.last_time < self.window_start && time > self.window_start {
            // split so the occupancy only sees the stationary window
            self.advance_to(self.window_start, active, cfg)?;
        }
        let start = self.last_time;
        let from = self.level;
        let step = advance_queue(from, active, time - start, cfg)?;
        self.ledger.inflow += active as f64 * cfg.peak_rate * (time - start);
        self.ledger.served += step.served;
        self.ledger.discarded += step.overflow;

        if start >= self.window_start {
            self.occupancy.add_linear(from, step.level, step.free_time);
            self.occupancy
                .add_constant(step.level, step.full_time + step.empty_time, self.buffer);
        }

        if step.level >= self.buffer {
            if self.full_since.is_none() {
                self.full_since = Some(time - step.full_time);
            }
        } else if let Some(since) = self.full_since.take() {
            self.overflow_intervals.push((since, start));
        }
        self.level = step.level;
        self.last_time = time;
        Ok(())
    }
}

/// Runs one fluid simulation over `[0, sim_duration]`.
///
/// The queue is sampled at every source transition. All sources start off
/// with a residual off time uniform in `[0, rtt]` and the buffer empty.
pub fn run_kams(cfg: &KamsConfig) -> Result<KamsRun, KamsError> {
    cfg.validate()?;
    let n = cfg.n_sources;
    let horizon = cfg.sim_duration;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| source_rng(cfg.seed, i)).collect();
    let mut sources: Vec<SourceState> = Vec::with_capacity(n);
    let mut heap = BinaryHeap::with_capacity(n);
    for (i, rng) in rngs.iter_mut().enumerate() {
        let end = rng.random::<f64>() * cfg.rtt;
        sources.push(SourceState { phase: Phase::Off, phase_end: end });
        heap.push(Event { time: end, source: i });
    }

    let window_start = cfg.warmup_fraction * horizon;
    let mut integ = Integrator {
        level: 0.0,
        last_time: 0.0,
        window_start,
        buffer: cfg.buffer_size,
        occupancy: Occupancy::new(cfg.buffer_size),
        ledger: FluidLedger::default(),
        full_since: None,
        overflow_intervals: Vec::new(),
    };
    let mut active = 0usize;
    let mut last_on = vec![0.0; n];
    let mut samples = vec![QueueSample { time: 0.0, queue: 0.0, active: 0 }];

    while let Some(ev) = heap.pop() {
        if ev.time > horizon {
            break;
        }
        integ.advance_to(ev.time, active, cfg)?;
        let src = &mut sources[ev.source];
        let rng = &mut rngs[ev.source];
        let next = match src.phase {
            Phase::Off => {
                active += 1;
                src.phase = Phase::On;
                let on = on_duration(&cfg.cwnd_law, cfg.peak_rate, rng);
                last_on[ev.source] = on;
                on
            }
            Phase::On => {
                active -= 1;
                src.phase = Phase::Off;
                off_duration(cfg.off_law, cfg.rtt, last_on[ev.source], rng)
            }
        };
        src.phase_end = ev.time + next;
        heap.push(Event { time: src.phase_end, source: ev.source });

        let sample = QueueSample { time: ev.time, queue: integ.level, active: active as u32 };
        match samples.last_mut() {
            Some(last) if last.time == ev.time => *last = sample,
            _ => samples.push(sample),
        }
    }
    integ.advance_to(horizon, active, cfg)?;
    if let Some(since) = integ.full_since.take() {
        integ.overflow_intervals.push((since, horizon));
    }
    integ.ledger.final_level = integ.level;

    let trace = QueueTrace {
        kind: TraceKind::Fluid,
        samples,
        overflow_intervals: integ.overflow_intervals,
        discarded: integ.ledger.discarded,
        buffer_size: cfg.buffer_size,
        duration: horizon,
        warmup_fraction: cfg.warmup_fraction,
        final_level: integ.level,
        occupancy: Some(integ.occupancy),
    };
    Ok(KamsRun { trace, ledger: integ.ledger })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> KamsConfig {
        KamsConfig {
            n_sources: 10,
            service_rate: 100.0,
            peak_rate: 20.0,
            buffer_size: 50.0,
            rtt: 0.1,
            cwnd_law: BurstLaw::TruncatedNormal(TruncatedNormalParams::new(5.0, 2.0).unwrap()),
            off_law: OffLaw::Constant,
            sim_duration: 50.0,
            warmup_fraction: 0.2,
            seed: 1,
            packet_size: 1500,
        }
    }

    /// Forward Euler with clamping; the independent route for `advance_queue`.
    fn euler(mut q: f64, rate: f64, buffer: f64, dt: f64, h: f64) -> (f64, f64) {
        let mut overflow = 0.0;
        let steps = (dt / h).round() as usize;
        for _ in 0..steps {
            let next = q + rate * h;
            if next > buffer {
                overflow += next - buffer;
                q = buffer;
            } else {
                q = next.max(0.0);
            }
        }
        (q, overflow)
    }

    #[test]
    fn on_duration_is_burst_over_peak_rate() {
        let law = BurstLaw::Exponential { mean: 1.0 };
        let mut a = source_rng(5, 0);
        let mut b = source_rng(5, 0);
        let burst = loop {
            let w = law.sample(&mut b);
            if w >= MIN_BURST {
                break w;
            }
        };
        let nu = 8333.0;
        assert_eq!(on_duration(&law, nu, &mut a), burst / nu);
        // a 10-packet burst at 100 Mbit/s with 1500-byte packets lasts 1.2 ms
        let nu = bits_to_packets(100e6, 1500);
        assert!((10.0 / nu - 1.2e-3).abs() < 1e-12);
    }

    #[test]
    fn unit_burst_lasts_one_packet_time() {
        let law = BurstLaw::TruncatedNormal(TruncatedNormalParams::new(1.0, 1e-3).unwrap());
        let mut rng = source_rng(1, 0);
        for _ in 0..100 {
            let d = on_duration(&law, 8333.0, &mut rng);
            assert!((d - 1.0 / 8333.0).abs() < 0.01 / 8333.0);
        }
    }

    #[test]
    fn mean_on_duration_matches_law_mean() {
        let p = TruncatedNormalParams::new(13.0, 4.0).unwrap();
        let law = BurstLaw::TruncatedNormal(p);
        let nu = 833.0;
        let mut rng = source_rng(3, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| on_duration(&law, nu, &mut rng)).sum::<f64>() / n as f64;
        let expected = p.mean() / nu;
        assert!((mean - expected).abs() < 1e-3 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn constant_off_law_returns_rtt() {
        let mut rng = source_rng(1, 0);
        for _ in 0..10 {
            assert_eq!(off_duration(OffLaw::Constant, 0.1, 0.01, &mut rng), 0.1);
        }
    }

    #[test]
    fn exponential_off_law_has_rtt_mean() {
        let mut rng = source_rng(2, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| off_duration(OffLaw::Exponential, 0.1, 0.01, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.1).abs() < 0.001);
    }

    #[test]
    fn balanced_rates_hold_level() {
        let c = KamsConfig { peak_rate: 10.0, ..cfg() };
        let s = advance_queue(10.0, 10, 3.7, &c).unwrap();
        assert_eq!(s.level, 10.0);
        assert_eq!(s.overflow, 0.0);
    }

    #[test]
    fn empty_queue_stays_empty() {
        let s = advance_queue(0.0, 0, 1.0, &cfg()).unwrap();
        assert_eq!(s.level, 0.0);
        assert_eq!(s.overflow, 0.0);
        assert_eq!(s.served, 0.0);
    }

    #[test]
    fn overflow_matches_substepped_euler() {
        let b = 50.0;
        let (q, overflow) = integrate(b - 1.0, 600.0, 100.0, b, 0.01).map(|s| (s.level, s.overflow)).unwrap();
        let (eq, eo) = euler(b - 1.0, 500.0, b, 0.01, 1e-6);
        assert_eq!(q, b);
        assert!((overflow - 4.0).abs() < 1e-9);
        assert!((eq - q).abs() < 1e-9 && (eo - overflow).abs() < 1e-3, "{eo}");
    }

    #[test]
    fn negative_dt_is_an_error() {
        assert_eq!(advance_queue(1.0, 1, -0.5, &cfg()), Err(KamsError::NegativeDt(-0.5)));
    }

    #[test]
    fn drains_to_zero_and_serves_inflow_afterwards() {
        let s = integrate(2.0, 50.0, 100.0, 10.0, 1.0).unwrap();
        assert_eq!(s.level, 0.0);
        assert!((s.free_time - 0.04).abs() < 1e-12);
        assert!((s.served - (100.0 * 0.04 + 50.0 * 0.96)).abs() < 1e-9);
    }

    #[test]
    fn underloaded_system_never_queues() {
        // 10 sources × 5 pkt/s < 100 pkt/s
        let c = KamsConfig { peak_rate: 5.0, ..cfg() };
        let run = run_kams(&c).unwrap();
        assert!(run.trace.samples.iter().all(|s| s.queue == 0.0));
        assert!(run.trace.overflow_intervals.is_empty());
    }

    #[test]
    fn tiny_bursts_leave_queue_empty() {
        let c = KamsConfig {
            cwnd_law: BurstLaw::TruncatedNormal(TruncatedNormalParams::new(1e-5, 1e-6).unwrap()),
            ..cfg()
        };
        let run = run_kams(&c).unwrap();
        assert!(run.trace.samples.iter().all(|s| s.queue < 1e-3));
    }

    #[test]
    fn samples_are_ordered_and_bounded() {
        let run = run_kams(&cfg()).unwrap();
        let t = &run.trace;
        assert!(t.samples.len() > 1000);
        for w in t.samples.windows(2) {
            assert!(w[1].time > w[0].time);
        }
        assert!(t.samples.iter().all(|s| (0.0..=t.buffer_size).contains(&s.queue)));
        assert!(t.samples.iter().any(|s| s.queue > 0.0));
    }

    #[test]
    fn constant_off_periods_space_activations_by_rtt() {
        let c = KamsConfig {
            n_sources: 1,
            cwnd_law: BurstLaw::TruncatedNormal(TruncatedNormalParams::new(1e-5, 1e-6).unwrap()),
            peak_rate: 1e6,
            sim_duration: 5.0,
            ..cfg()
        };
        let run = run_kams(&c).unwrap();
        let starts: Vec<f64> = run
            .trace
            .samples
            .windows(2)
            .filter(|w| w[1].active > w[0].active)
            .map(|w| w[1].time)
            .collect();
        assert!(starts.len() > 40);
        for w in starts.windows(2) {
            assert!((w[1] - w[0] - c.rtt).abs() < 1e-9, "{}", w[1] - w[0]);
        }
    }

    #[test]
    fn rtt_minus_burst_makes_cycles_one_round_trip() {
        let c = KamsConfig {
            n_sources: 1,
            cwnd_law: BurstLaw::Exponential { mean: 20.0 },
            off_law: OffLaw::RttMinusBurst,
            peak_rate: 1000.0,
            rtt: 0.1,
            sim_duration: 10.0,
            ..cfg()
        };
        let run = run_kams(&c).unwrap();
        let starts: Vec<f64> = run
            .trace
            .samples
            .windows(2)
            .filter(|w| w[1].active > w[0].active)
            .map(|w| w[1].time)
            .collect();
        assert!(starts.len() > 40);
        for w in starts.windows(2) {
            // a burst longer than the round trip pushes the next start out
            assert!(w[1] - w[0] >= c.rtt - 1e-9);
        }
        let exact = starts.windows(2).filter(|w| (w[1] - w[0] - c.rtt).abs() < 1e-9).count();
        assert!(exact * 10 >= (starts.len() - 1) * 9);
        let mut rng = source_rng(1, 0);
        assert_eq!(off_duration(OffLaw::RttMinusBurst, 0.1, 0.03, &mut rng), 0.1 - 0.03);
        assert!(off_duration(OffLaw::RttMinusBurst, 0.1, 0.3, &mut rng) > 0.0);
    }

    #[test]
    fn invalid_config_lists_every_problem() {
        let c = KamsConfig { n_sources: 0, rtt: -1.0, warmup_fraction: 1.0, ..cfg() };
        match run_kams(&c) {
            Err(KamsError::InvalidConfig(msg)) => {
                assert!(msg.contains("n_sources"));
                assert!(msg.contains("rtt"));
                assert!(msg.contains("warmup_fraction"));
            }
            other => panic!("{other:?}"),
        }
    }
}
