use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use kamsim::ams::{AmsError, ExpOnOffSystem, OverflowCurve};
use kamsim::analysis::{trace_cdf, ComparisonReport};
use kamsim::distributions::{fit_truncated_normal, TruncatedNormalParams};
use kamsim::kams::{run_kams, BurstLaw, KamsError};
use kamsim::packet::{run_packet_sim, PacketError};
use kamsim::sweep::{
    finish, parse_config, run_point, run_sweep, write_contour_csv, write_failures_csv, write_report_csv,
    write_sensitivity_csv, PointError, Preset, SweepError, SweepSpec,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Validation(_) => CliError::Validation(e.to_string()),
            SweepError::Pool(_) => CliError::Runtime(e.to_string()),
            SweepError::Parse { .. } | SweepError::Io { .. } => CliError::Parse(e.to_string()),
        }
    }
}

impl From<PointError> for CliError {
    fn from(e: PointError) -> Self {
        match e {
            PointError::Packet(PacketError::InvalidConfig(_)) | PointError::Kams(KamsError::InvalidConfig(_)) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(format!("write failed: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "kamsim", version, about = "Fluid on-off queue model against a packet-level TCP reference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fluid on-off (KAMS) simulation.
    Kams {
        #[command(subcommand)]
        action: KamsAction,
    },
    /// Packet-level AIMD reference simulation.
    Packet {
        #[command(subcommand)]
        action: PacketAction,
    },
    /// Closed-form overflow curve for exponential on-off sources.
    Ams {
        #[command(subcommand)]
        action: AmsAction,
    },
    /// Packet run, window fit, and fluid run at one grid point.
    Compare(PointArgs),
    /// Every grid point of the configured sweep.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Concurrent grid points.
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Subcommand)]
enum KamsAction {
    Run {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        law: LawArgs,
    },
}

#[derive(Subcommand)]
enum PacketAction {
    Run(PointArgs),
}

#[derive(Subcommand)]
enum AmsAction {
    Curve(AmsArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Sweep configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Simulated seconds, overriding the configuration.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args, Clone)]
struct PointArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Round trip time in seconds; the first configured value by default.
    #[arg(long)]
    rtt: Option<f64>,
    /// Buffer size in packets; the first configured value by default.
    #[arg(long)]
    buffer: Option<u32>,
}

#[derive(Args, Clone)]
struct LawArgs {
    /// Burst law; fitted to a packet run at the same point when omitted.
    #[arg(long, value_enum)]
    law: Option<LawArg>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Mean burst for the exponential law, packets.
    #[arg(long)]
    mean: Option<f64>,
}

#[derive(Args, Clone)]
struct AmsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    n_sources: Option<usize>,
    /// Peak rate, packets/s.
    #[arg(long)]
    peak_rate: Option<f64>,
    /// Service rate, packets/s.
    #[arg(long)]
    service_rate: Option<f64>,
    /// Mean on period, seconds; mean burst / peak rate by default.
    #[arg(long)]
    mean_on: Option<f64>,
    /// Mean off period, seconds; the first configured round trip by default.
    #[arg(long)]
    mean_off: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    mean_burst: f64,
    /// Largest queue level on the curve; the largest configured buffer by default.
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long, default_value_t = 201)]
    points: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum LawArg {
    TruncatedNormal,
    Exponential,
    HalfNormal,
}

impl CommonArgs {
    fn spec(&self) -> Result<SweepSpec, CliError> {
        let mut spec = match &self.config {
            Some(path) => parse_config(path)?,
            None => SweepSpec::preset(match self.preset {
                PresetArg::Paper => Preset::Paper,
                PresetArg::Desk => Preset::Desk,
            }),
        };
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(d) = self.duration {
            spec.sim_duration = d;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn out(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", self.out_dir.display())))?;
        let path = self.out_dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
    }
}

impl PointArgs {
    fn resolve(&self) -> Result<(SweepSpec, f64, u32), CliError> {
        let spec = self.common.spec()?;
        let rtt = self.rtt.unwrap_or(spec.rtt_values[0]);
        let buffer = self.buffer.unwrap_or(spec.buffer_sizes[0]);
        let mut problems = Vec::new();
        if !(rtt.is_finite() && rtt > 0.0) {
            problems.push(format!("rtt must be > 0, got {rtt}"));
        }
        if buffer == 0 {
            problems.push("buffer must be >= 1".to_string());
        }
        if !problems.is_empty() {
            return Err(CliError::Validation(problems.join("; ")));
        }
        Ok((spec, rtt, buffer))
    }
}

/// First line of every CSV: the fully resolved configuration.
fn header<T: Serialize>(value: &T) -> String {
    format!("config: {}", serde_json::to_string(value).expect("config serializes"))
}

fn with_header<W: Write>(mut w: W, header: &str) -> io::Result<W> {
    writeln!(w, "# {header}")?;
    Ok(w)
}

#[derive(Serialize)]
struct PointConfig<'a, T: Serialize> {
    sweep: &'a SweepSpec,
    rtt: f64,
    buffer_size: u32,
    seed: u64,
    run: T,
}

fn kams_run(point: &PointArgs, law: &LawArgs) -> Result<(), CliError> {
    let (spec, rtt, buffer) = point.resolve()?;
    let seed = spec.seed;
    let law = match (law.law, law.mu, law.sigma, law.mean) {
        (None, None, None, None) => {
            let packet = run_packet_sim(&spec.packet_config(rtt, buffer, seed)).map_err(PointError::from)?;
            BurstLaw::TruncatedNormal(fit_truncated_normal(&packet.window_pmf).map_err(PointError::from)?)
        }
        (None | Some(LawArg::TruncatedNormal), mu, sigma, None) => {
            let (Some(mu), Some(sigma)) = (mu, sigma) else {
                return Err(CliError::Usage("truncated normal law needs --mu and --sigma".into()));
            };
            BurstLaw::TruncatedNormal(
                TruncatedNormalParams::new(mu, sigma).map_err(|e| CliError::Validation(e.to_string()))?,
            )
        }
        (Some(LawArg::Exponential), None, None, Some(mean)) => BurstLaw::Exponential { mean },
        (Some(LawArg::HalfNormal), None, Some(sigma), None) => BurstLaw::HalfNormal { sigma },
        _ => {
            return Err(CliError::Usage(
                "use --law exponential --mean M, --law half-normal --sigma S, or --mu M --sigma S".into(),
            ))
        }
    };
    let cfg = spec.kams_config(rtt, buffer, law, seed);
    let run = run_kams(&cfg).map_err(PointError::from)?;
    let h = header(&PointConfig { sweep: &spec, rtt, buffer_size: buffer, seed, run: &cfg });
    let c = &point.common;
    run.trace.write_samples_csv(with_header(c.out("kams_samples.csv")?, &h)?)?;
    run.trace.write_overflow_csv(with_header(c.out("kams_overflow.csv")?, &h)?)?;
    let cdf = trace_cdf(&run.trace).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut w = with_header(c.out("kams_cdf.csv")?, &h)?;
    writeln!(w, "queue_pkts,cdf")?;
    for (b, v) in cdf.values().iter().enumerate() {
        writeln!(w, "{b},{v}")?;
    }
    w.flush()?;
    let l = run.ledger;
    println!(
        "kams: {} samples, discarded {:.3} of {:.3} packets, final level {:.3}",
        run.trace.samples.len(),
        l.discarded,
        l.inflow,
        l.final_level
    );
    Ok(())
}

fn packet_run(point: &PointArgs) -> Result<(), CliError> {
    let (spec, rtt, buffer) = point.resolve()?;
    let cfg = spec.packet_config(rtt, buffer, spec.seed);
    let run = run_packet_sim(&cfg).map_err(PointError::from)?;
    let h = header(&PointConfig { sweep: &spec, rtt, buffer_size: buffer, seed: spec.seed, run: &cfg });
    let c = &point.common;
    run.trace.write_samples_csv(with_header(c.out("packet_samples.csv")?, &h)?)?;
    run.trace.write_overflow_csv(with_header(c.out("packet_overflow.csv")?, &h)?)?;
    run.losses.write_csv(with_header(c.out("loss_bins.csv")?, &h)?)?;
    let mut w = with_header(c.out("burst_pmf.csv")?, &h)?;
    writeln!(w, "burst_pkts,count")?;
    for (b, n) in run.window_pmf.iter() {
        writeln!(w, "{b},{n}")?;
    }
    w.flush()?;
    let s = run.stats;
    println!(
        "packet: sent {} delivered {} dropped {} (window loss rate {:.5}), mean burst {:.3}",
        s.sent,
        s.delivered,
        s.dropped,
        s.loss_rate(),
        run.window_pmf.mean()
    );
    Ok(())
}

fn ams_curve(a: &AmsArgs) -> Result<(), CliError> {
    let spec = a.common.spec()?;
    let peak_rate = a.peak_rate.unwrap_or(spec.peak_rate());
    let sys = ExpOnOffSystem {
        n_sources: a.n_sources.unwrap_or(spec.n_flows),
        peak_rate,
        service_rate: a.service_rate.unwrap_or(spec.service_rate()),
        mean_on: a.mean_on.unwrap_or(a.mean_burst / peak_rate),
        mean_off: a.mean_off.unwrap_or(spec.rtt_values[0]),
    };
    let x_max = a.x_max.unwrap_or(*spec.buffer_sizes.iter().max().unwrap() as f64);
    if a.points < 2 || !(x_max.is_finite() && x_max > 0.0) {
        return Err(CliError::Validation(format!("need --points >= 2 and --x-max > 0, got {} and {x_max}", a.points)));
    }
    let curve = OverflowCurve::new(&sys).map_err(|e| match e {
        AmsError::InvalidParameter(_) | AmsError::UnstableSystem { .. } => CliError::Validation(e.to_string()),
        AmsError::NumericalDegeneracy(..) => CliError::Runtime(e.to_string()),
    })?;
    #[derive(Serialize)]
    struct AmsConfig {
        system: ExpOnOffSystem,
        x_max: f64,
        points: usize,
    }
    let h = header(&AmsConfig { system: sys, x_max, points: a.points });
    let mut w = with_header(a.common.out("ams_curve.csv")?, &h)?;
    writeln!(w, "x,overflow_prob")?;
    for i in 0..a.points {
        let x = x_max * i as f64 / (a.points - 1) as f64;
        writeln!(w, "{x},{}", curve.overflow_probability(x))?;
    }
    w.flush()?;
    println!("ams: dominant decay rate {:?}", curve.dominant_rate());
    Ok(())
}

fn compare(point: &PointArgs) -> Result<(), CliError> {
    let (spec, rtt, buffer) = point.resolve()?;
    let result = run_point(&spec, rtt, buffer, spec.seed)?;
    let outcome = finish(vec![result.report.clone()], vec![], spec.model.sync_rtt_threshold);
    let h = header(&PointConfig { sweep: &spec, rtt, buffer_size: buffer, seed: spec.seed, run: () });
    let c = &point.common;
    write_report_csv(c.out("report.csv")?, &outcome, Some(&h))?;
    let mut w = with_header(c.out("cdf.csv")?, &h)?;
    writeln!(w, "queue_pkts,cdf_model,cdf_reference")?;
    for (b, (m, r)) in result.model_cdf.values().iter().zip(result.reference_cdf.values()).enumerate() {
        writeln!(w, "{b},{m},{r}")?;
    }
    w.flush()?;
    print_report(&result.report);
    Ok(())
}

fn print_report(r: &ComparisonReport) {
    let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "rtt {} B {}: nrmse {} (exponential {}), p_full model {:.5} ref {:.5}, spikiness {}, loss {:.5}",
        r.rtt,
        r.buffer_size,
        f(r.nrmse),
        f(r.nrmse_exponential),
        r.full_buffer_prob_model,
        r.full_buffer_prob_ref,
        f(r.spikiness),
        r.loss_rate
    );
    if let Some(n) = &r.note {
        println!("  note: {n}");
    }
}

fn sweep(common: &CommonArgs, workers: Option<usize>) -> Result<(), CliError> {
    let mut spec = common.spec()?;
    if workers.is_some() {
        spec.workers = workers;
        spec.validate()?;
    }
    let outcome = run_sweep(&spec)?;
    let h = header(&spec);
    write_report_csv(common.out("report.csv")?, &outcome, Some(&h))?;
    write_contour_csv(common.out("contour.csv")?, &outcome, Some(&h))?;
    write_sensitivity_csv(common.out("sensitivity.csv")?, &outcome, Some(&h))?;
    write_failures_csv(common.out("failures.csv")?, &outcome, Some(&h))?;
    for r in &outcome.reports {
        print_report(r);
    }
    for f in &outcome.failures {
        eprintln!("point rtt {} B {} failed: {}", f.rtt, f.buffer_size, f.error);
    }
    if let Some(k) = outcome.correction_factor {
        println!("full-buffer correction factor {k:.4}");
    }
    println!("wrote {}", display(&common.out_dir));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Kams { action: KamsAction::Run { point, law } } => kams_run(point, law),
        Command::Packet { action: PacketAction::Run(point) } => packet_run(point),
        Command::Ams { action: AmsAction::Curve(a) } => ams_curve(a),
        Command::Compare(point) => compare(point),
        Command::Sweep { common, workers } => sweep(common, *workers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
