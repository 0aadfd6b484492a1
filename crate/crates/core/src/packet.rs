//! Packet-level reference: AIMD window flows through a drop-tail bottleneck.
//!
//! Each flow releases its whole window once per round trip, back to back at
//! the access rate, starting from a fixed per-flow phase. The router serves
//! packets FIFO at the bottleneck rate and drops arrivals that find
//! `buffer_size` packets in the system (the one in service included). A flow
//! learns whether any packet of a burst was dropped when its next burst is
//! due, one round trip later, and then halves its window once or grows it by
//! `ai_increment`.
//!
//! There is no slow start, no timeout and no fast recovery.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::EmpiricalPmf;
use crate::kams::source_rng;
use crate::trace::{QueueSample, QueueTrace, TraceKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PacketError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("observation window [{0}, {1}) is empty")]
    EmptyWindow(f64, f64),
    #[error("bin width must be > 0, got {0}")]
    InvalidBinWidth(f64),
}

fn default_warmup() -> f64 {
    0.2
}
fn default_ai() -> f64 {
    1.0
}
fn default_md() -> f64 {
    0.5
}
fn default_initial_cwnd() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketSimConfig {
    pub n_flows: usize,
    /// Packets/s.
    pub bottleneck_rate: f64,
    /// Packets/s.
    pub access_rate: f64,
    /// Packets, counting the one in service.
    pub buffer_size: u32,
    pub rtt: f64,
    pub sim_duration: f64,
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    /// Window growth per loss-free round trip, packets.
    #[serde(default = "default_ai")]
    pub ai_increment: f64,
    #[serde(default = "default_md")]
    pub md_factor: f64,
    /// Window ceiling; `access_rate * rtt` when absent.
    #[serde(default)]
    pub cwnd_cap: Option<f64>,
    #[serde(default = "default_initial_cwnd")]
    pub initial_cwnd: f64,
    /// Queue sampling phase as a fraction of the round trip.
    #[serde(default)]
    pub sample_phase: f64,
    /// Loss-series bin width; one round trip when absent.
    #[serde(default)]
    pub loss_bin_width: Option<f64>,
    /// Start each burst one round trip after the previous burst's first
    /// packet leaves the bottleneck, so queueing delay shifts the phase.
    /// Otherwise bursts repeat at exact multiples of `rtt`.
    #[serde(default)]
    pub ack_clocked: bool,
    /// Each round trip is stretched by a uniform factor in
    /// `[1 - j/2, 1 + j/2]`, drawn per burst from the flow's own stream.
    #[serde(default)]
    pub phase_jitter: f64,
    /// Keep every burst and packet arrival (memory heavy; for tests).
    #[serde(default)]
    pub record_detail: bool,
}

impl PacketSimConfig {
    pub fn cwnd_cap(&self) -> f64 {
        self.cwnd_cap.unwrap_or(self.access_rate * self.rtt)
    }

    pub fn loss_bin_width(&self) -> f64 {
        self.loss_bin_width.unwrap_or(self.rtt)
    }

    pub fn validate(&self) -> Result<(), PacketError> {
        let mut problems = Vec::new();
        if self.n_flows == 0 {
            problems.push("n_flows must be positive".to_string());
        }
        if self.buffer_size < 1 {
            problems.push("buffer_size must be >= 1".to_string());
        }
        for (v, name) in [
            (self.bottleneck_rate, "bottleneck_rate"),
            (self.access_rate, "access_rate"),
            (self.rtt, "rtt"),
            (self.sim_duration, "sim_duration"),
            (self.ai_increment, "ai_increment"),
            (self.loss_bin_width(), "loss_bin_width"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.md_factor > 0.0 && self.md_factor < 1.0) {
            problems.push(format!("md_factor must lie in (0, 1), got {}", self.md_factor));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            problems.push(format!("warmup_fraction must lie in [0, 1), got {}", self.warmup_fraction));
        }
        if !(0.0..=1.0).contains(&self.phase_jitter) {
            problems.push(format!("phase_jitter must lie in [0, 1], got {}", self.phase_jitter));
        }
        if !(0.0..1.0).contains(&self.sample_phase) {
            problems.push(format!("sample_phase must lie in [0, 1), got {}", self.sample_phase));
        }
        let cap = self.cwnd_cap();
        if !(cap.is_finite() && cap >= 1.0) {
            problems.push(format!("cwnd_cap must be >= 1, got {cap}"));
        }
        if !(self.initial_cwnd >= 1.0 && self.initial_cwnd <= cap) {
            problems.push(format!("initial_cwnd must lie in [1, cwnd_cap], got {}", self.initial_cwnd));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PacketError::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowState {
    /// Packets, within `[1, cwnd_cap]`.
    pub cwnd: f64,
    pub next_burst_time: f64,
    /// Some packet of the burst in flight was dropped.
    pub loss_pending: bool,
    /// Packets of the current burst not yet handed to the router.
    remaining: u32,
    next_packet: u32,
    burst_start: f64,
}

/// Aggregate drops per fixed-width time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSeries {
    pub bins: Vec<u64>,
    pub bin_width: f64,
    pub start: f64,
}

impl LossSeries {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bins.iter().map(|&b| b as f64).collect()
    }

    /// Writes `bin_start_s,drops`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_start_s,drops")?;
        for (i, n) in self.bins.iter().enumerate() {
            writeln!(w, "{},{}", self.start + i as f64 * self.bin_width, n)?;
        }
        Ok(())
    }
}

/// Counts drop times into `ceil((end - start) / bin_width)` bins over
/// `[start, end)`.
pub fn aggregate_losses(drops: &[f64], bin_width: f64, window: (f64, f64)) -> Result<LossSeries, PacketError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(PacketError::InvalidBinWidth(bin_width));
    }
    let (start, end) = window;
    if !(end > start) {
        return Err(PacketError::EmptyWindow(start, end));
    }
    let n = ((end - start) / bin_width - 1e-9).ceil().max(1.0) as usize;
    let mut bins = vec![0u64; n];
    for &t in drops {
        if t >= start && t < end {
            let i = (((t - start) / bin_width).floor() as usize).min(n - 1);
            bins[i] += 1;
        }
    }
    Ok(LossSeries { bins, bin_width, start })
}

/// Packet accounting over the whole run and over the stationary window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PacketStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Packets still in the router at the end.
    pub in_system_at_end: u64,
    pub sent_in_window: u64,
    pub dropped_in_window: u64,
    /// Bursts in the window that lost at least one packet.
    pub loss_events_in_window: u64,
}

impl PacketStats {
    /// Drops per packet sent over the stationary window.
    pub fn loss_rate(&self) -> f64 {
        if self.sent_in_window == 0 {
            0.0
        } else {
            self.dropped_in_window as f64 / self.sent_in_window as f64
        }
    }

    /// Lossy bursts per packet sent over the stationary window.
    pub fn loss_event_rate(&self) -> f64 {
        if self.sent_in_window == 0 {
            0.0
        } else {
            self.loss_events_in_window as f64 / self.sent_in_window as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstRecord {
    pub flow: u32,
    pub start: f64,
    pub size: u32,
    pub cwnd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRun {
    pub trace: QueueTrace,
    pub losses: LossSeries,
    /// Histogram of burst sizes over the stationary window.
    pub window_pmf: EmpiricalPmf,
    pub stats: PacketStats,
    pub drop_times: Vec<f64>,
    pub bursts: Vec<BurstRecord>,
    /// `(time, flow)` of every packet handed to the router.
    pub arrivals: Vec<(f64, u32)>,
}

impl PacketRun {
    pub fn loss_rate(&self) -> f64 {
        self.stats.loss_rate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    // at equal times: queue sample first, then bursts, then packets
    Sample,
    Burst,
    Packet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    kind: Kind,
    flow: u32,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.kind.cmp(&self.kind))
            .then_with(|| other.flow.cmp(&self.flow))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Drop-tail FIFO tracked by the departure times of the packets it holds.
struct Router {
    departures: VecDeque<f64>,
    service_time: f64,
    capacity: usize,
    delivered: u64,
    full_since: Option<f64>,
    full_intervals: Vec<(f64, f64)>,
}

impl Router {
    fn settle(&mut self, now: f64) {
        while let Some(&d) = self.departures.front() {
            if d > now {
                break;
            }
            self.departures.pop_front();
            self.delivered += 1;
            if let Some(since) = self.full_since.take() {
                self.full_intervals.push((since, d));
            }
        }
    }

    fn len(&self) -> usize {
        self.departures.len()
    }

    /// Departure time of the accepted packet, or `None` when it is dropped.
    fn offer(&mut self, now: f64) -> Option<f64> {
        if self.departures.len() >= self.capacity {
            return None;
        }
        let begin = self.departures.back().map_or(now, |&d| d.max(now));
        let leave = begin + self.service_time;
        self.departures.push_back(leave);
        if self.departures.len() == self.capacity {
            self.full_since = Some(now);
        }
        Some(leave)
    }
}

/// Runs the packet-level simulation over `[0, sim_duration]`.
pub fn run_packet_sim(cfg: &PacketSimConfig) -> Result<PacketRun, PacketError> {
    cfg.validate()?;
    let horizon = cfg.sim_duration;
    let window_start = cfg.warmup_fraction * horizon;
    let cap = cfg.cwnd_cap();
    let gap = 1.0 / cfg.access_rate;

    let mut rngs: Vec<ChaCha8Rng> = (0..cfg.n_flows).map(|i| source_rng(cfg.seed, i)).collect();
    let mut flows: Vec<FlowState> = rngs
        .iter_mut()
        .map(|rng| {
            let phase = rng.random::<f64>() * cfg.rtt;
            FlowState {
                cwnd: cfg.initial_cwnd,
                next_burst_time: phase,
                loss_pending: false,
                remaining: 0,
                next_packet: 0,
                burst_start: phase,
            }
        })
        .collect();
    let mut heap = BinaryHeap::with_capacity(2 * cfg.n_flows + 1);
    for (i, f) in flows.iter().enumerate() {
        heap.push(Event { time: f.next_burst_time, kind: Kind::Burst, flow: i as u32 });
    }
    let mut sample_index = 0u64;
    let sample_time = |j: u64| (cfg.sample_phase + j as f64) * cfg.rtt;
    heap.push(Event { time: sample_time(0), kind: Kind::Sample, flow: 0 });

    let mut router = Router {
        departures: VecDeque::new(),
        service_time: 1.0 / cfg.bottleneck_rate,
        capacity: cfg.buffer_size as usize,
        delivered: 0,
        full_since: None,
        full_intervals: Vec::new(),
    };
    let mut stats = PacketStats::default();
    let mut samples = Vec::new();
    let mut drop_times = Vec::new();
    let mut window_pmf = EmpiricalPmf::new();
    let mut bursts = Vec::new();
    let mut arrivals = Vec::new();
    let mut emitting = 0u32;
    let round_trip = |rng: &mut ChaCha8Rng| {
        if cfg.phase_jitter > 0.0 {
            cfg.rtt * (1.0 + cfg.phase_jitter * (rng.random::<f64>() - 0.5))
        } else {
            cfg.rtt
        }
    };

    while let Some(ev) = heap.pop() {
        if ev.time > horizon {
            break;
        }
        let now = ev.time;
        router.settle(now);
        match ev.kind {
            Kind::Sample => {
                samples.push(QueueSample { time: now, queue: router.len() as f64, active: emitting });
                sample_index += 1;
                heap.push(Event { time: sample_time(sample_index), kind: Kind::Sample, flow: 0 });
            }
            Kind::Burst => {
                let flow = &mut flows[ev.flow as usize];
                if now > flow.burst_start {
                    flow.cwnd = if flow.loss_pending {
                        (flow.cwnd * cfg.md_factor).max(1.0)
                    } else {
                        (flow.cwnd + cfg.ai_increment).min(cap)
                    };
                }
                flow.loss_pending = false;
                let size = (flow.cwnd.round() as u32).max(1);
                flow.burst_start = now;
                flow.remaining = size;
                flow.next_packet = 0;
                flow.next_burst_time = (now + round_trip(&mut rngs[ev.flow as usize])).max(now + size as f64 * gap);
                if now >= window_start {
                    window_pmf.add(size as u64);
                }
                if cfg.record_detail {
                    bursts.push(BurstRecord { flow: ev.flow, start: now, size, cwnd: flow.cwnd });
                }
                emitting += 1;
                heap.push(Event { time: now, kind: Kind::Packet, flow: ev.flow });
                if !cfg.ack_clocked {
                    heap.push(Event { time: flow.next_burst_time, kind: Kind::Burst, flow: ev.flow });
                }
            }
            Kind::Packet => {
                let flow = &mut flows[ev.flow as usize];
                stats.sent += 1;
                if now >= window_start {
                    stats.sent_in_window += 1;
                }
                if cfg.record_detail {
                    arrivals.push((now, ev.flow));
                }
                let leave = router.offer(now);
                if cfg.ack_clocked && flow.next_packet == 0 {
                    let earliest = flow.burst_start + flow.remaining as f64 * gap;
                    flow.next_burst_time = (leave.unwrap_or(now) + round_trip(&mut rngs[ev.flow as usize])).max(earliest);
                    heap.push(Event { time: flow.next_burst_time, kind: Kind::Burst, flow: ev.flow });
                }
                if leave.is_none() {
                    stats.dropped += 1;
                    if now >= window_start {
                        stats.dropped_in_window += 1;
                    }
                    drop_times.push(now);
                    if !flow.loss_pending && flow.burst_start >= window_start {
                        stats.loss_events_in_window += 1;
                    }
                    flow.loss_pending = true;
                }
                flow.next_packet += 1;
                flow.remaining -= 1;
                if flow.remaining > 0 {
                    let t = flow.burst_start + flow.next_packet as f64 * gap;
                    heap.push(Event { time: t, kind: Kind::Packet, flow: ev.flow });
                } else {
                    emitting -= 1;
                }
            }
        }
    }
    router.settle(horizon);
    if let Some(since) = router.full_since.take() {
        router.full_intervals.push((since, horizon));
    }
    stats.delivered = router.delivered;
    stats.in_system_at_end = router.len() as u64;

    let losses = aggregate_losses(&drop_times, cfg.loss_bin_width(), (window_start, horizon))?;
    let trace = QueueTrace {
        kind: TraceKind::Packet,
        samples,
        overflow_intervals: std::mem::take(&mut router.full_intervals),
        discarded: stats.dropped as f64,
        buffer_size: cfg.buffer_size as f64,
        duration: horizon,
        warmup_fraction: cfg.warmup_fraction,
        final_level: router.len() as f64,
        occupancy: None,
    };
    Ok(PacketRun {
        trace,
        losses,
        window_pmf,
        stats,
        drop_times,
        bursts,
        arrivals,
    })
}
