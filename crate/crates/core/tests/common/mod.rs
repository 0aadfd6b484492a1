#![allow(dead_code)]

use kamsim::trace::QueueTrace;

/// Inflow, service, and overflow rebuilt segment by segment from the samples.
pub struct Replay {
    pub inflow: f64,
    pub served: f64,
    pub discarded: f64,
    pub final_level: f64,
    pub worst_level_gap: f64,
}

pub fn replay(trace: &QueueTrace, nu: f64, c: f64, b: f64) -> Replay {
    let mut out = Replay { inflow: 0.0, served: 0.0, discarded: 0.0, final_level: 0.0, worst_level_gap: 0.0 };
    let mut q = 0.0;
    let n = trace.samples.len();
    for i in 0..n {
        let s = trace.samples[i];
        out.worst_level_gap = out.worst_level_gap.max((s.queue - q).abs());
        q = s.queue;
        let end = if i + 1 < n { trace.samples[i + 1].time } else { trace.duration };
        let dt = end - s.time;
        let rate = s.active as f64 * nu;
        out.inflow += rate * dt;
        let slope = rate - c;
        if slope > 0.0 {
            let to_full = (b - q) / slope;
            if to_full < dt {
                out.discarded += slope * (dt - to_full);
                q = b;
            } else {
                q += slope * dt;
            }
            out.served += c * dt;
        } else if slope < 0.0 {
            let to_empty = q / -slope;
            if to_empty < dt {
                out.served += c * to_empty + rate * (dt - to_empty);
                q = 0.0;
            } else {
                out.served += c * dt;
                q += slope * dt;
            }
        } else {
            out.served += if q > 0.0 || rate >= c { c * dt } else { rate * dt };
        }
    }
    out.final_level = q;
    out
}
