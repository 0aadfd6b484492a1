//! Queue traces shared by the fluid engine and the packet oracle.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// One observation of the bottleneck queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub time: f64,
    /// Queue content in packets (fractional for the fluid engine).
    pub queue: f64,
    /// Sources (flows) transmitting at `time`.
    pub active: u32,
}

/// Time-weighted queue occupancy in unit-width bins `[b, b + 1)`.
///
/// Point masses at the empty and full boundaries are tracked separately so
/// that strict exceedance probabilities can be read at integer levels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub bins: Vec<f64>,
    pub at_empty: f64,
    pub at_full: f64,
    pub total: f64,
}

impl Occupancy {
    pub fn new(buffer_size: f64) -> Self {
        Self {
            bins: vec![0.0; buffer_size.floor() as usize + 1],
            ..Self::default()
        }
    }

    fn bin_of(&self, level: f64) -> usize {
        (level.max(0.0).floor() as usize).min(self.bins.len() - 1)
    }

    /// Queue held at `level` for `dt`.
    pub fn add_constant(&mut self, level: f64, dt: f64, buffer_size: f64) {
        if dt <= 0.0 {
            return;
        }
        let b = self.bin_of(level);
        self.bins[b] += dt;
        if level <= 0.0 {
            self.at_empty += dt;
        }
        if level >= buffer_size {
            self.at_full += dt;
        }
        self.total += dt;
    }

    /// Queue moving linearly from `from` to `to` over `dt`.
    pub fn add_linear(&mut self, from: f64, to: f64, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        if from == to {
            let b = self.bin_of(from);
            self.bins[b] += dt;
            self.total += dt;
            return;
        }
        let (lo, hi) = if from < to { (from, to) } else { (to, from) };
        let per_unit = dt / (hi - lo);
        let first = self.bin_of(lo);
        let last = self.bin_of(hi);
        for b in first..=last {
            let seg_lo = lo.max(b as f64);
            let seg_hi = if b == self.bins.len() - 1 { hi } else { hi.min((b + 1) as f64) };
            if seg_hi > seg_lo {
                self.bins[b] += (seg_hi - seg_lo) * per_unit;
            }
        }
        self.total += dt;
    }

    /// Fraction of time with queue strictly above integer level `x`.
    pub fn exceedance(&self, x: usize) -> f64 {
        if self.total <= 0.0 {
            return 0.0;
        }
        if x >= self.bins.len() {
            return 0.0;
        }
        let mut mass: f64 = self.bins[x..].iter().sum();
        if x == 0 {
            mass -= self.at_empty;
        }
        if x == self.bins.len() - 1 {
            mass -= self.at_full;
        }
        (mass / self.total).clamp(0.0, 1.0)
    }

    /// `P(Q <= b)` for every integer bin `b`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out: Vec<f64> = self
            .bins
            .iter()
            .map(|w| {
                acc += w;
                acc / self.total
            })
            .collect();
        if let Some(last) = out.last_mut() {
            *last = 1.0;
        }
        out
    }
}

/// Which engine produced a trace; decides how full-buffer time is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    #[default]
    Fluid,
    Packet,
}

/// Time-stamped queue observations plus loss bookkeeping from one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueTrace {
    pub kind: TraceKind,
    pub samples: Vec<QueueSample>,
    /// Intervals during which the queue sat at the buffer limit.
    pub overflow_intervals: Vec<(f64, f64)>,
    /// Fluid (or packets) discarded at the full buffer over the whole run.
    pub discarded: f64,
    pub buffer_size: f64,
    pub duration: f64,
    pub warmup_fraction: f64,
    /// Queue content at `duration`.
    pub final_level: f64,
    /// Exact time-weighted occupancy over the post-warmup window, when the
    /// engine can integrate its trajectory.
    pub occupancy: Option<Occupancy>,
}

impl QueueTrace {
    /// Start of the stationary observation window.
    pub fn window_start(&self) -> f64 {
        self.warmup_fraction * self.duration
    }

    pub fn window_len(&self) -> f64 {
        self.duration - self.window_start()
    }

    pub fn stationary_samples(&self) -> impl Iterator<Item = &QueueSample> {
        let start = self.window_start();
        self.samples.iter().filter(move |s| s.time >= start)
    }

    /// Time-weighted mean of the active-source count over `[from, duration]`.
    pub fn mean_active(&self, from: f64) -> f64 {
        let mut acc = 0.0;
        for (i, s) in self.samples.iter().enumerate() {
            let end = self.samples.get(i + 1).map_or(self.duration, |n| n.time);
            let lo = s.time.max(from);
            if end > lo {
                acc += s.active as f64 * (end - lo);
            }
        }
        acc / (self.duration - from)
    }

    /// Total time at the buffer limit inside `[from, to]`.
    pub fn full_time_within(&self, from: f64, to: f64) -> f64 {
        self.overflow_intervals
            .iter()
            .map(|&(a, b)| (b.min(to) - a.max(from)).max(0.0))
            .sum()
    }

    /// Writes `time_s,queue_pkts,active_sources`.
    pub fn write_samples_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_s,queue_pkts,active_sources")?;
        for s in &self.samples {
            writeln!(w, "{},{},{}", s.time, s.queue, s.active)?;
        }
        Ok(())
    }

    /// Writes `overflow_start_s,overflow_end_s`.
    pub fn write_overflow_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "overflow_start_s,overflow_end_s")?;
        for (a, b) in &self.overflow_intervals {
            writeln!(w, "{a},{b}")?;
        }
        Ok(())
    }
}
