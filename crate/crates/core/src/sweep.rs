//! Grid sweeps over buffer size and round trip time.

use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    self, corrected_error, correction_factor, full_buffer_probability, loss_overflow_ratio, nrmse, spikiness,
    time_weighted_cdf, trace_cdf, AnalysisError, ComparisonReport, EmpiricalCdf, SpectrumPart,
};
use crate::distributions::{fit_truncated_normal, DistributionError};
use crate::kams::{bits_to_packets, run_kams, BurstLaw, KamsConfig, KamsError, OffLaw};
use crate::packet::{run_packet_sim, PacketError, PacketRun, PacketSimConfig};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid sweep config: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Error)]
pub enum PointError {
    #[error("packet simulation: {0}")]
    Packet(#[from] PacketError),
    #[error("window fit: {0}")]
    Fit(#[from] DistributionError),
    #[error("fluid simulation: {0}")]
    Kams(#[from] KamsError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
}

/// Knobs of the packet-level reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleOptions {
    #[serde(default = "default_ai")]
    pub ai_increment: f64,
    #[serde(default = "default_md")]
    pub md_factor: f64,
    #[serde(default = "default_true")]
    pub ack_clocked: bool,
    #[serde(default)]
    pub phase_jitter: f64,
    #[serde(default)]
    pub sample_phase: f64,
    /// Loss-series bin width in seconds; one round trip when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_bin_width: Option<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            ai_increment: default_ai(),
            md_factor: default_md(),
            ack_clocked: true,
            phase_jitter: 0.0,
            sample_phase: 0.0,
            loss_bin_width: None,
        }
    }
}

/// Knobs of the fluid model and of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    #[serde(default)]
    pub off_law: OffLaw,
    /// Compare the exact time-weighted fluid distribution instead of
    /// transition-epoch samples.
    #[serde(default)]
    pub time_weighted: bool,
    /// Also run an exponential burst law with the fitted mean.
    #[serde(default = "default_true")]
    pub exponential_sensitivity: bool,
    #[serde(default)]
    pub spectrum: SpectrumPart,
    #[serde(default = "default_min_qlen")]
    pub nrmse_min_qlen: usize,
    #[serde(default = "default_sync_rtt")]
    pub sync_rtt_threshold: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            off_law: OffLaw::Constant,
            time_weighted: false,
            exponential_sensitivity: true,
            spectrum: SpectrumPart::Real,
            nrmse_min_qlen: default_min_qlen(),
            sync_rtt_threshold: default_sync_rtt(),
        }
    }
}

fn default_ai() -> f64 {
    1.0
}
fn default_md() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_min_qlen() -> usize {
    analysis::NRMSE_MIN_QLEN
}
fn default_sync_rtt() -> f64 {
    analysis::SYNC_RTT_THRESHOLD
}
fn default_warmup() -> f64 {
    0.2
}
fn default_replications() -> u32 {
    1
}
fn default_packet_size() -> u32 {
    1500
}

/// A fully resolved sweep: the grid, the shared network, and run options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n_flows: usize,
    pub bottleneck_bps: f64,
    pub access_bps: f64,
    pub packet_size: u32,
    pub buffer_sizes: Vec<u32>,
    pub rtt_values: Vec<f64>,
    pub sim_duration: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Independent runs per grid point; their statistics are averaged.
    #[serde(default = "default_replications")]
    pub replications: u32,
    /// Free text carried into output headers.
    #[serde(default)]
    pub scale_label: String,
    /// Concurrent grid points; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub oracle: OracleOptions,
    pub model: ModelOptions,
}

/// On-disk form; required fields are optional here so that every missing
/// one can be reported at once.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    preset: Option<Preset>,
    n_flows: Option<usize>,
    bottleneck_bps: Option<f64>,
    access_bps: Option<f64>,
    packet_size: Option<u32>,
    buffer_sizes: Option<Vec<u32>>,
    rtt_values: Option<Vec<f64>>,
    sim_duration: Option<f64>,
    warmup_fraction: Option<f64>,
    seed: Option<u64>,
    replications: Option<u32>,
    scale_label: Option<String>,
    workers: Option<usize>,
    oracle: Option<OracleOptions>,
    model: Option<ModelOptions>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(format!("unknown preset {s:?} (expected paper or desk)")),
        }
    }
}

fn steps(first: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((first + step * i as f64) * 1e9).round() / 1e9).collect()
}

impl SweepSpec {
    /// 1000 flows over a 1 Gb/s bottleneck with 100 Mb/s access links.
    pub fn paper() -> Self {
        Self {
            n_flows: 1000,
            bottleneck_bps: 1e9,
            access_bps: 100e6,
            packet_size: default_packet_size(),
            buffer_sizes: (1..=6).map(|i| 50 * i).collect(),
            rtt_values: steps(0.05, 0.05, 6),
            sim_duration: 600.0,
            warmup_fraction: default_warmup(),
            seed: 1,
            replications: 1,
            scale_label: "paper".to_string(),
            workers: None,
            oracle: OracleOptions::default(),
            model: ModelOptions::default(),
        }
    }

    /// Scaled-down grid: 100 flows, 100 Mb/s bottleneck, 10 Mb/s access.
    pub fn desk() -> Self {
        Self {
            n_flows: 100,
            bottleneck_bps: 100e6,
            access_bps: 10e6,
            buffer_sizes: (1..=6).map(|i| 10 * i).collect(),
            scale_label: "desk".to_string(),
            ..Self::paper()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Bottleneck rate in packets/s.
    pub fn service_rate(&self) -> f64 {
        bits_to_packets(self.bottleneck_bps, self.packet_size)
    }

    /// Access rate in packets/s.
    pub fn peak_rate(&self) -> f64 {
        bits_to_packets(self.access_bps, self.packet_size)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let mut problems = Vec::new();
        if self.replications == 0 {
            problems.push("replications must be >= 1".to_string());
        }
        if self.n_flows == 0 {
            problems.push("n_flows must be positive".to_string());
        }
        if self.packet_size == 0 {
            problems.push("packet_size must be positive".to_string());
        }
        for (v, name) in [
            (self.bottleneck_bps, "bottleneck_bps"),
            (self.access_bps, "access_bps"),
            (self.sim_duration, "sim_duration"),
            (self.oracle.ai_increment, "oracle.ai_increment"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.buffer_sizes.is_empty() {
            problems.push("buffer_sizes must not be empty".to_string());
        }
        if let Some(b) = self.buffer_sizes.iter().find(|&&b| b == 0) {
            problems.push(format!("buffer_sizes entries must be >= 1, got {b}"));
        }
        if self.rtt_values.is_empty() {
            problems.push("rtt_values must not be empty".to_string());
        }
        if let Some(r) = self.rtt_values.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            problems.push(format!("rtt_values entries must be > 0, got {r}"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            problems.push(format!("warmup_fraction must lie in [0, 1), got {}", self.warmup_fraction));
        }
        if self.workers == Some(0) {
            problems.push("workers must be positive".to_string());
        }
        if !(self.oracle.md_factor > 0.0 && self.oracle.md_factor < 1.0) {
            problems.push(format!("oracle.md_factor must lie in (0, 1), got {}", self.oracle.md_factor));
        }
        if !(0.0..=1.0).contains(&self.oracle.phase_jitter) {
            problems.push(format!("oracle.phase_jitter must lie in [0, 1], got {}", self.oracle.phase_jitter));
        }
        if !(0.0..1.0).contains(&self.oracle.sample_phase) {
            problems.push(format!("oracle.sample_phase must lie in [0, 1), got {}", self.oracle.sample_phase));
        }
        if let Some(w) = self.oracle.loss_bin_width {
            if !(w.is_finite() && w > 0.0) {
                problems.push(format!("oracle.loss_bin_width must be > 0, got {w}"));
            }
        }
        if !(self.model.sync_rtt_threshold.is_finite() && self.model.sync_rtt_threshold >= 0.0) {
            problems.push(format!("model.sync_rtt_threshold must be >= 0, got {}", self.model.sync_rtt_threshold));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SweepError::Validation(problems))
        }
    }

    /// Canonical TOML form; parsing it back yields an identical spec.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep spec serializes")
    }

    pub fn packet_config(&self, rtt: f64, buffer_size: u32, seed: u64) -> PacketSimConfig {
        PacketSimConfig {
            n_flows: self.n_flows,
            bottleneck_rate: self.service_rate(),
            access_rate: self.peak_rate(),
            buffer_size,
            rtt,
            sim_duration: self.sim_duration,
            seed,
            warmup_fraction: self.warmup_fraction,
            ai_increment: self.oracle.ai_increment,
            md_factor: self.oracle.md_factor,
            cwnd_cap: None,
            initial_cwnd: 1.0,
            sample_phase: self.oracle.sample_phase,
            loss_bin_width: self.oracle.loss_bin_width,
            ack_clocked: self.oracle.ack_clocked,
            phase_jitter: self.oracle.phase_jitter,
            record_detail: false,
        }
    }

    pub fn kams_config(&self, rtt: f64, buffer_size: u32, law: BurstLaw, seed: u64) -> KamsConfig {
        KamsConfig {
            n_sources: self.n_flows,
            service_rate: self.service_rate(),
            peak_rate: self.peak_rate(),
            buffer_size: buffer_size as f64,
            rtt,
            cwnd_law: law,
            off_law: self.model.off_law,
            sim_duration: self.sim_duration,
            warmup_fraction: self.warmup_fraction,
            seed,
            packet_size: self.packet_size,
        }
    }

    /// Seed for the grid point `(rtt_index, buffer_index)`.
    pub fn point_seed(&self, rtt_index: usize, buffer_index: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(((rtt_index as u64) << 32) | buffer_index as u64))
    }

    /// Seed of replication `r` at a grid point; replication 0 uses the point seed itself.
    pub fn replication_seed(&self, rtt_index: usize, buffer_index: usize, r: u32) -> u64 {
        let base = self.point_seed(rtt_index, buffer_index);
        if r == 0 {
            base
        } else {
            splitmix64(base ^ splitmix64(u64::from(r)))
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses and validates sweep TOML. A `preset = "desk"` key supplies
/// defaults for every field the file leaves out.
pub fn parse_config_str(text: &str) -> Result<SweepSpec, SweepError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| SweepError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let base = raw.preset.map(SweepSpec::preset);
    let mut missing = Vec::new();
    macro_rules! field {
        ($name:ident) => {
            match (raw.$name, base.as_ref()) {
                (Some(v), _) => Some(v),
                (None, Some(b)) => Some(b.$name.clone()),
                (None, None) => {
                    missing.push(format!("missing field {}", stringify!($name)));
                    None
                }
            }
        };
    }
    let n_flows = field!(n_flows);
    let bottleneck_bps = field!(bottleneck_bps);
    let access_bps = field!(access_bps);
    let buffer_sizes = field!(buffer_sizes);
    let rtt_values = field!(rtt_values);
    let sim_duration = field!(sim_duration);
    if !missing.is_empty() {
        return Err(SweepError::Validation(missing));
    }
    let spec = SweepSpec {
        n_flows: n_flows.unwrap(),
        bottleneck_bps: bottleneck_bps.unwrap(),
        access_bps: access_bps.unwrap(),
        packet_size: raw.packet_size.unwrap_or(default_packet_size()),
        buffer_sizes: buffer_sizes.unwrap(),
        rtt_values: rtt_values.unwrap(),
        sim_duration: sim_duration.unwrap(),
        warmup_fraction: raw.warmup_fraction.unwrap_or(default_warmup()),
        seed: raw.seed.or(base.as_ref().map(|b| b.seed)).unwrap_or(1),
        replications: raw.replications.unwrap_or(1),
        scale_label: raw
            .scale_label
            .or(base.as_ref().map(|b| b.scale_label.clone()))
            .unwrap_or_default(),
        workers: raw.workers.or(base.as_ref().and_then(|b| b.workers)),
        oracle: raw.oracle.or(base.as_ref().map(|b| b.oracle.clone())).unwrap_or_default(),
        model: raw.model.or(base.as_ref().map(|b| b.model.clone())).unwrap_or_default(),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: &Path) -> Result<SweepSpec, SweepError> {
    let text = std::fs::read_to_string(path).map_err(|source| SweepError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

/// Everything measured at one grid point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub report: ComparisonReport,
    pub packet: PacketRun,
    pub model_cdf: EmpiricalCdf,
    pub reference_cdf: EmpiricalCdf,
}

/// Runs the packet reference, fits the window law, and runs the fluid model
/// (and optionally its exponential counterpart) at one grid point.
pub fn run_point(spec: &SweepSpec, rtt: f64, buffer_size: u32, seed: u64) -> Result<PointResult, PointError> {
    let packet = run_packet_sim(&spec.packet_config(rtt, buffer_size, seed))?;
    let fit = fit_truncated_normal(&packet.window_pmf)?;
    let model_cdf_of = |law: BurstLaw| -> Result<(EmpiricalCdf, f64), PointError> {
        let run = run_kams(&spec.kams_config(rtt, buffer_size, law, seed))?;
        let cdf = if spec.model.time_weighted {
            time_weighted_cdf(&run.trace).ok_or(AnalysisError::EmptyAfterWarmup)?
        } else {
            trace_cdf(&run.trace)?
        };
        Ok((cdf, full_buffer_probability(&run.trace)?))
    };
    let (model_cdf, p_model) = model_cdf_of(BurstLaw::TruncatedNormal(fit))?;
    let reference_cdf = trace_cdf(&packet.trace)?;
    let p_ref = full_buffer_probability(&packet.trace)?;
    let min_q = spec.model.nrmse_min_qlen;
    let mut notes = Vec::new();
    let nrmse_fit = nrmse(&model_cdf, &reference_cdf, min_q)
        .map_err(|e| notes.push(format!("nrmse: {e}")))
        .ok();
    let nrmse_exponential = if spec.model.exponential_sensitivity {
        let (cdf, _) = model_cdf_of(BurstLaw::Exponential { mean: fit.mean() })?;
        nrmse(&cdf, &reference_cdf, min_q).ok()
    } else {
        None
    };
    let spik = spikiness(&packet.losses.as_f64(), spec.model.spectrum)
        .map_err(|e| notes.push(format!("spikiness: {e}")))
        .ok();
    let loss_rate = packet.loss_rate();
    let lor = loss_overflow_ratio(loss_rate, p_ref)
        .map_err(|e| notes.push(format!("loss/overflow: {e}")))
        .ok();
    let report = ComparisonReport {
        rtt,
        buffer_size,
        nrmse: nrmse_fit,
        full_buffer_prob_model: p_model,
        full_buffer_prob_ref: p_ref,
        multiplicative_error: (p_ref > 0.0).then(|| p_model / p_ref),
        corrected_multiplicative_error: None,
        spikiness: spik,
        loss_overflow_ratio: lor,
        loss_rate,
        fitted: Some((fit.mu(), fit.sigma())),
        nrmse_exponential,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    };
    Ok(PointResult {
        report,
        packet,
        model_cdf,
        reference_cdf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub rtt: f64,
    pub buffer_size: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// Sorted by `(rtt, buffer_size)`.
    pub reports: Vec<ComparisonReport>,
    pub failures: Vec<PointFailure>,
    /// Mean multiplicative full-buffer error over unsynchronized points.
    pub correction_factor: Option<f64>,
}

/// Runs every grid point, in parallel up to `spec.workers`. Failed points
/// are collected rather than aborting the sweep.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome, SweepError> {
    spec.validate()?;
    let mut points = Vec::new();
    for (i, &rtt) in spec.rtt_values.iter().enumerate() {
        for (j, &b) in spec.buffer_sizes.iter().enumerate() {
            points.push((rtt, b, i, j));
        }
    }
    let work = || -> Vec<Result<ComparisonReport, PointFailure>> {
        points
            .par_iter()
            .map(|&(rtt, b, i, j)| {
                (0..spec.replications)
                    .map(|r| run_point(spec, rtt, b, spec.replication_seed(i, j, r)).map(|p| p.report))
                    .collect::<Result<Vec<_>, _>>()
                    .map(average_reports)
                    .map_err(|e| PointFailure {
                        rtt,
                        buffer_size: b,
                        error: e.to_string(),
                    })
            })
            .collect()
    };
    let results = match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SweepError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(f) => failures.push(f),
        }
    }
    Ok(finish(reports, failures, spec.model.sync_rtt_threshold))
}

/// Sorts, then applies the sweep-wide full-buffer correction.
/// Mean of each statistic over replications of one grid point.
pub fn average_reports(mut runs: Vec<ComparisonReport>) -> ComparisonReport {
    if runs.len() == 1 {
        return runs.pop().unwrap();
    }
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&ComparisonReport) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&ComparisonReport) -> Option<f64>| {
        let v: Vec<f64> = runs.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let p_model = mean(&|r| r.full_buffer_prob_model);
    let p_ref = mean(&|r| r.full_buffer_prob_ref);
    let fitted = {
        let v: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.fitted).collect();
        (!v.is_empty()).then(|| {
            let k = v.len() as f64;
            (v.iter().map(|p| p.0).sum::<f64>() / k, v.iter().map(|p| p.1).sum::<f64>() / k)
        })
    };
    let notes: Vec<&str> = runs.iter().filter_map(|r| r.note.as_deref()).collect();
    let mut out = ComparisonReport {
        rtt: runs[0].rtt,
        buffer_size: runs[0].buffer_size,
        nrmse: mean_opt(&|r| r.nrmse),
        full_buffer_prob_model: p_model,
        full_buffer_prob_ref: p_ref,
        multiplicative_error: None,
        corrected_multiplicative_error: None,
        spikiness: mean_opt(&|r| r.spikiness),
        loss_overflow_ratio: mean_opt(&|r| r.loss_overflow_ratio),
        loss_rate: mean(&|r| r.loss_rate),
        fitted,
        nrmse_exponential: mean_opt(&|r| r.nrmse_exponential),
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    };
    out.multiplicative_error = out.pair().multiplicative_error();
    out
}

pub fn finish(mut reports: Vec<ComparisonReport>, mut failures: Vec<PointFailure>, sync_rtt: f64) -> SweepOutcome {
    let key = |rtt: f64, b: u32| (rtt.to_bits(), b);
    reports.sort_by(|a, b| a.rtt.total_cmp(&b.rtt).then(a.buffer_size.cmp(&b.buffer_size)));
    failures.sort_by_key(|f| key(f.rtt, f.buffer_size));
    let pairs: Vec<_> = reports.iter().map(|r| r.pair()).collect();
    let factor = correction_factor(&pairs, sync_rtt).ok();
    if let Some(f) = factor {
        for r in &mut reports {
            r.corrected_multiplicative_error = corrected_error(&r.pair(), f);
        }
    }
    SweepOutcome {
        reports,
        failures,
        correction_factor: factor,
    }
}

fn comment<W: Write>(w: &mut W, header: Option<&str>) -> io::Result<()> {
    if let Some(h) = header {
        for line in h.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}

/// One row per grid point under [`ComparisonReport::CSV_HEADER`].
pub fn write_report_csv<W: Write>(mut w: W, outcome: &SweepOutcome, header: Option<&str>) -> io::Result<()> {
    comment(&mut w, header)?;
    writeln!(w, "{}", ComparisonReport::CSV_HEADER)?;
    for r in &outcome.reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Long format `rtt_s,buffer_pkts,metric,value`, one line per metric.
pub fn write_contour_csv<W: Write>(mut w: W, outcome: &SweepOutcome, header: Option<&str>) -> io::Result<()> {
    comment(&mut w, header)?;
    writeln!(w, "rtt_s,buffer_pkts,metric,value")?;
    for r in &outcome.reports {
        let metrics = [
            ("nrmse", r.nrmse),
            ("spikiness", r.spikiness),
            ("mult_err", r.multiplicative_error),
            ("corrected_mult_err", r.corrected_multiplicative_error),
            ("loss_overflow_ratio", r.loss_overflow_ratio),
            ("loss_rate", Some(r.loss_rate)),
        ];
        for (name, v) in metrics {
            if let Some(v) = v {
                writeln!(w, "{},{},{name},{v}", r.rtt, r.buffer_size)?;
            }
        }
    }
    Ok(())
}

/// Fitted law and the exponential-law comparison per grid point.
pub fn write_sensitivity_csv<W: Write>(mut w: W, outcome: &SweepOutcome, header: Option<&str>) -> io::Result<()> {
    comment(&mut w, header)?;
    writeln!(w, "rtt_s,buffer_pkts,tn_mu,tn_sigma,nrmse_truncated_normal,nrmse_exponential")?;
    let f = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |x| x.to_string());
    for r in &outcome.reports {
        let (mu, sigma) = r.fitted.map_or((None, None), |(m, s)| (Some(m), Some(s)));
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.rtt,
            r.buffer_size,
            f(mu),
            f(sigma),
            f(r.nrmse),
            f(r.nrmse_exponential)
        )?;
    }
    Ok(())
}

/// `rtt_s,buffer_pkts,error` for points that could not be evaluated.
pub fn write_failures_csv<W: Write>(mut w: W, outcome: &SweepOutcome, header: Option<&str>) -> io::Result<()> {
    comment(&mut w, header)?;
    writeln!(w, "rtt_s,buffer_pkts,error")?;
    for f in &outcome.failures {
        writeln!(w, "{},{},\"{}\"", f.rtt, f.buffer_size, f.error.replace('"', "'"))?;
    }
    Ok(())
}
