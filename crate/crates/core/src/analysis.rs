//! Comparison statistics between the fluid model and the packet reference.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{QueueSample, QueueTrace, TraceKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no samples left after discarding the warm-up period")]
    EmptyAfterWarmup,
    #[error("distributions cover different bins ({model} vs {reference})")]
    BinMismatch { model: usize, reference: usize },
    #[error("no bins above queue length {0}")]
    NoBinsAbove(usize),
    #[error("no test point with rtt >= {0} s")]
    NoQualifyingPoints(f64),
    #[error("reference full-buffer probability is zero at every qualifying point")]
    ZeroReference,
    #[error("loss spectrum has no nonzero component (constant series)")]
    DegenerateSpectrum,
    #[error("series needs at least 2 bins, got {0}")]
    SeriesTooShort(usize),
    #[error("full-buffer probability is zero")]
    ZeroOverflow,
}

/// Cumulative queue-length distribution over integer bins `0..=B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    values: Vec<f64>,
}

impl EmpiricalCdf {
    /// Floors each level into bins `0..=buffer_size` and accumulates.
    pub fn from_levels<I: IntoIterator<Item = f64>>(levels: I, buffer_size: usize) -> Result<Self, AnalysisError> {
        let mut counts = vec![0u64; buffer_size + 1];
        let mut total = 0u64;
        for q in levels {
            let b = (q.max(0.0).floor() as usize).min(buffer_size);
            counts[b] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(AnalysisError::EmptyAfterWarmup);
        }
        Ok(Self::from_weights(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>()))
    }

    fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut values: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                (acc / total).min(1.0)
            })
            .collect();
        if let Some(last) = values.last_mut() {
            *last = 1.0;
        }
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `P(Q <= bin)`.
    pub fn at(&self, bin: usize) -> f64 {
        self.values.get(bin).copied().unwrap_or(1.0)
    }

    pub fn buffer_size(&self) -> usize {
        self.values.len() - 1
    }
}

/// CDF of the samples taken at or after the end of the warm-up period.
pub fn build_cdf(samples: &[QueueSample], buffer_size: usize, window_start: f64) -> Result<EmpiricalCdf, AnalysisError> {
    EmpiricalCdf::from_levels(
        samples.iter().filter(|s| s.time >= window_start).map(|s| s.queue),
        buffer_size,
    )
}

/// [`build_cdf`] over a trace's own stationary window.
pub fn trace_cdf(trace: &QueueTrace) -> Result<EmpiricalCdf, AnalysisError> {
    build_cdf(&trace.samples, trace.buffer_size.floor() as usize, trace.window_start())
}

/// Exact time-weighted CDF from a fluid trace's integrated occupancy.
pub fn time_weighted_cdf(trace: &QueueTrace) -> Option<EmpiricalCdf> {
    let occ = trace.occupancy.as_ref()?;
    if occ.total <= 0.0 {
        return None;
    }
    Some(EmpiricalCdf::from_weights(&occ.bins))
}

/// Default cutoff: only queue lengths above 5 packets enter the error.
pub const NRMSE_MIN_QLEN: usize = 5;

/// Root-mean-square difference of two CDFs over bins `min_qlen + 1 ..= B`,
/// divided by the mean of the reference over the same bins.
pub fn nrmse(model: &EmpiricalCdf, reference: &EmpiricalCdf, min_qlen: usize) -> Result<f64, AnalysisError> {
    if model.len() != reference.len() {
        return Err(AnalysisError::BinMismatch {
            model: model.len(),
            reference: reference.len(),
        });
    }
    let first = min_qlen + 1;
    if first >= reference.len() {
        return Err(AnalysisError::NoBinsAbove(min_qlen));
    }
    let m = &model.values[first..];
    let r = &reference.values[first..];
    let n = r.len() as f64;
    let mse = m.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let mean_ref = r.iter().sum::<f64>() / n;
    Ok(mse.sqrt() / mean_ref)
}

/// Fraction of the stationary window with the buffer full.
///
/// Fluid traces use the measure of their full intervals; packet traces the
/// share of samples with `queue >= B - 1/2`.
pub fn full_buffer_probability(trace: &QueueTrace) -> Result<f64, AnalysisError> {
    let start = trace.window_start();
    match trace.kind {
        TraceKind::Fluid => {
            let len = trace.window_len();
            if len <= 0.0 {
                return Err(AnalysisError::EmptyAfterWarmup);
            }
            Ok((trace.full_time_within(start, trace.duration) / len).clamp(0.0, 1.0))
        }
        TraceKind::Packet => {
            let (full, total) = trace
                .stationary_samples()
                .fold((0u64, 0u64), |(f, t), s| (f + (s.queue >= trace.buffer_size - 0.5) as u64, t + 1));
            if total == 0 {
                return Err(AnalysisError::EmptyAfterWarmup);
            }
            Ok(full as f64 / total as f64)
        }
    }
}

/// One test point's full-buffer probabilities, for the sweep-level correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullBufferPair {
    pub p_model: f64,
    pub p_ref: f64,
    pub rtt: f64,
}

impl FullBufferPair {
    pub fn multiplicative_error(&self) -> Option<f64> {
        (self.p_ref > 0.0).then(|| self.p_model / self.p_ref)
    }
}

/// Round trips at or above this are treated as free of loss synchronization.
pub const SYNC_RTT_THRESHOLD: f64 = 0.1;

/// Mean of `p_model / p_ref` over points with `rtt >= rtt_threshold`.
/// Qualifying points with a zero reference are skipped; if that leaves
/// nothing the result is [`AnalysisError::ZeroReference`].
pub fn correction_factor(points: &[FullBufferPair], rtt_threshold: f64) -> Result<f64, AnalysisError> {
    let qualifying: Vec<&FullBufferPair> = points.iter().filter(|p| p.rtt >= rtt_threshold - 1e-12).collect();
    if qualifying.is_empty() {
        return Err(AnalysisError::NoQualifyingPoints(rtt_threshold));
    }
    let ratios: Vec<f64> = qualifying.iter().filter_map(|p| p.multiplicative_error()).collect();
    if ratios.is_empty() {
        return Err(AnalysisError::ZeroReference);
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// `|p_model / factor / p_ref - 1|`.
pub fn corrected_error(pair: &FullBufferPair, factor: f64) -> Option<f64> {
    (pair.p_ref > 0.0).then(|| (pair.p_model / factor / pair.p_ref - 1.0).abs())
}

/// Which part of each Fourier coefficient enters the spikiness ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumPart {
    #[default]
    Real,
    Modulus,
}

/// Unnormalized forward DFT.
pub fn dft(series: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Peak over mean of the nonzero-frequency spectrum of a loss series:
/// `max_{i>0} |Re ω_i| / ((1/M) Σ_{i>0} |Re ω_i|)`.
pub fn spikiness(series: &[f64], part: SpectrumPart) -> Result<f64, AnalysisError> {
    let m = series.len();
    if m < 2 {
        return Err(AnalysisError::SeriesTooShort(m));
    }
    let spectrum = dft(series);
    let mags: Vec<f64> = spectrum[1..]
        .iter()
        .map(|c| match part {
            SpectrumPart::Real => c.re.abs(),
            SpectrumPart::Modulus => c.norm(),
        })
        .collect();
    let sum: f64 = mags.iter().sum();
    // round-off floor of the transform for a constant series
    let scale: f64 = series.iter().map(|x| x.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    if sum <= 1e-9 * scale {
        return Err(AnalysisError::DegenerateSpectrum);
    }
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    Ok(peak / (sum / m as f64))
}

/// Mean loss rate over full-buffer probability.
pub fn loss_overflow_ratio(loss_rate: f64, full_buffer_prob: f64) -> Result<f64, AnalysisError> {
    if full_buffer_prob <= 0.0 {
        return Err(AnalysisError::ZeroOverflow);
    }
    Ok(loss_rate / full_buffer_prob)
}

/// All comparison quantities for one `(rtt, buffer)` test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rtt: f64,
    pub buffer_size: u32,
    pub nrmse: Option<f64>,
    pub full_buffer_prob_model: f64,
    pub full_buffer_prob_ref: f64,
    pub multiplicative_error: Option<f64>,
    pub corrected_multiplicative_error: Option<f64>,
    pub spikiness: Option<f64>,
    pub loss_overflow_ratio: Option<f64>,
    pub loss_rate: f64,
    /// Fitted window law `(mu, sigma)` used for the fluid run.
    pub fitted: Option<(f64, f64)>,
    /// NRMSE with an exponential burst law of the same mean.
    pub nrmse_exponential: Option<f64>,
    /// Set when some statistic could not be formed; explains why.
    pub note: Option<String>,
}

impl ComparisonReport {
    pub const CSV_HEADER: &'static str =
        "rtt_s,buffer_pkts,nrmse,p_full_model,p_full_ref,mult_err,corrected_mult_err,spikiness,loss_overflow_ratio";

    pub fn pair(&self) -> FullBufferPair {
        FullBufferPair {
            p_model: self.full_buffer_prob_model,
            p_ref: self.full_buffer_prob_ref,
            rtt: self.rtt,
        }
    }

    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
        }
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.rtt,
            self.buffer_size,
            opt(self.nrmse),
            self.full_buffer_prob_model,
            self.full_buffer_prob_ref,
            opt(self.multiplicative_error),
            opt(self.corrected_multiplicative_error),
            opt(self.spikiness),
            opt(self.loss_overflow_ratio),
        )
    }
}
