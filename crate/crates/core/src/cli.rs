//! `photonforge` command line: argument parsing, input digests, JSON
//! reports and exit codes.
//!
//! Exit codes: 0 success, 2 usage or validation errors, 1 runtime errors.
//! Errors print as `error[module.Variant]: message`.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::correlator::{self, CorrelationConfig, CorrelationError, CorrelationHistogram};
use crate::emitsim::{simulate_scene, SceneConfig, SimError};
use crate::fitting::{
    fit_g2_with, fit_saturation, g2_vs_power, FitError, G2FitOptions, G2Model, ResidualKind,
    SaturationPoint,
};
use crate::pipeline::{self, PipelineError, Scenario};
use crate::report::{InputDigest, RunReport};
use crate::scanstab::{self, DriftSeries, ScanError, ScanMap};
use crate::spectra::{
    self, CwdmChannel, RateSource, Spectrum, SpectrumError, VoigtFitOptions, VoigtFitResult,
};
use crate::timetag::{self, TimeTagError, TimeTagStream};
use crate::tomography::{self, ProjectionCounts, TomographyError};

#[derive(Debug, Parser)]
#[command(name = "photonforge", version, about = "Single-photon source simulation and characterization")]
struct Cli {
    /// Output path: the data file for convert/simulate/g2, the JSON report
    /// otherwise (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed; overrides any seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scene (simulate) or scenario (reproduce) JSON. A previous run report
    /// is accepted and its config echo reused.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// No human-readable summaries.
    #[arg(long, global = true)]
    quiet: bool,
    /// Report path for commands whose --out is a data file
    /// (default `<out>.report.json`).
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Directory for plot-ready CSV tables.
    #[arg(long, global = true, value_name = "DIR")]
    emit_plot_data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert time tags between PTAG and the CSV debug form.
    Convert(ConvertArgs),
    /// Simulate an HBT acquisition from a scene config.
    Simulate(SimulateArgs),
    /// Correlate two channels into a g2 histogram CSV.
    G2(G2Args),
    /// Fit the antibunching model to a histogram CSV.
    FitG2(FitG2Args),
    /// Fit the saturation law to a power sweep CSV.
    FitSaturation(FitSaturationArgs),
    /// Fit g2(0) at each power of a sweep and the linear trend.
    G2Sweep(G2SweepArgs),
    /// Voigt fit of a spectrum CSV.
    FitSpectrum(FitSpectrumArgs),
    /// Match a fitted line against the CWDM grid.
    SelectEmitter(SelectEmitterArgs),
    /// Signal-to-noise ratio with and without a CWDM filter.
    Snr(SnrArgs),
    /// Polarization state tomography from six projection counts.
    Tomo(TomoArgs),
    /// Emitter candidates on a confocal scan.
    ScanPeaks(ScanPeaksArgs),
    /// Gaussian spot fit on a confocal scan.
    FitSpot(FitSpotArgs),
    /// Lorentzian axial profile fit.
    AxialFit(InputArgs),
    /// Retention time of a drift trace.
    Stability(StabilityArgs),
    /// Run a built-in scenario and compare against its targets.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TagFormat {
    Ptag,
    Csv,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output format; inferred from the --out extension when absent.
    #[arg(long, value_enum)]
    to: Option<TagFormat>,
    /// Tick length for CSV input.
    #[arg(long, default_value_t = 1)]
    resolution_ps: u64,
    /// Channel count for CSV input (default: one past the largest seen).
    #[arg(long)]
    channels: Option<u16>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Override the scene duration.
    #[arg(long, conflicts_with = "tags")]
    duration_s: Option<f64>,
    /// Choose the duration for about this many tags.
    #[arg(long)]
    tags: Option<u64>,
}

#[derive(Debug, Args)]
struct G2Args {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    ch_a: u16,
    #[arg(long, default_value_t = 1)]
    ch_b: u16,
    #[arg(long, default_value_t = correlator::DEFAULT_BIN_PS)]
    bin_ps: u64,
    #[arg(long, default_value_t = correlator::DEFAULT_WINDOW_NS)]
    window_ns: f64,
    /// Background-correct with this signal fraction S/(S+B).
    #[arg(long)]
    signal_fraction: Option<f64>,
    /// Tick length for CSV input.
    #[arg(long, default_value_t = 1)]
    resolution_ps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Residuals {
    Auto,
    Deviance,
    Gaussian,
}

impl From<Residuals> for ResidualKind {
    fn from(r: Residuals) -> Self {
        match r {
            Residuals::Auto => ResidualKind::Auto,
            Residuals::Deviance => ResidualKind::Deviance,
            Residuals::Gaussian => ResidualKind::Gaussian,
        }
    }
}

#[derive(Debug, Args)]
struct FitG2Args {
    #[arg(long)]
    input: PathBuf,
    /// Known Gaussian IRF on the delay axis.
    #[arg(long)]
    irf_sigma_ps: Option<f64>,
    #[arg(long, value_enum, default_value_t = Residuals::Auto)]
    residuals: Residuals,
}

#[derive(Debug, Args)]
struct FitSaturationArgs {
    /// CSV with columns power_mw,rate and optional sigma.
    #[arg(long)]
    input: PathBuf,
    /// Add a linear background and constant offset.
    #[arg(long)]
    background: bool,
}

#[derive(Debug, Args)]
struct G2SweepArgs {
    /// CSV with columns power_mw,histogram; histogram paths are relative to
    /// the sweep file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    irf_sigma_ps: Option<f64>,
}

#[derive(Debug, Args)]
struct FitSpectrumArgs {
    #[arg(long)]
    input: PathBuf,
    /// Integration time per point.
    #[arg(long, default_value_t = 1.0)]
    integration_s: f64,
    #[arg(long)]
    linear_baseline: bool,
}

#[derive(Debug, Args)]
struct SelectEmitterArgs {
    /// fit-spectrum report or a bare Voigt fit result.
    #[arg(long)]
    fit: PathBuf,
}

#[derive(Debug, Args)]
struct SnrArgs {
    #[arg(long, conflicts_with = "signal_spectrum")]
    signal_hz: Option<f64>,
    #[arg(long)]
    signal_in_band_hz: Option<f64>,
    #[arg(long, conflicts_with = "background_spectrum")]
    background_hz: Option<f64>,
    #[arg(long)]
    background_in_band_hz: Option<f64>,
    /// Signal spectrum CSV instead of rates.
    #[arg(long)]
    signal_spectrum: Option<PathBuf>,
    #[arg(long)]
    background_spectrum: Option<PathBuf>,
    /// Integration time per point of the spectra.
    #[arg(long, default_value_t = 1.0)]
    integration_s: f64,
    /// CWDM channel center of the filter.
    #[arg(long)]
    channel_nm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TomoMethod {
    Mle,
    Linear,
}

#[derive(Debug, Args)]
struct TomoArgs {
    /// JSON with keys H,V,D,A,R,L, each {counts, seconds}.
    #[arg(long)]
    counts: PathBuf,
    #[arg(long, value_enum, default_value_t = TomoMethod::Mle)]
    method: TomoMethod,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct ScanPeaksArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    threshold_sigma: f64,
    #[arg(long)]
    suppression_um: Option<f64>,
}

#[derive(Debug, Args)]
struct FitSpotArgs {
    #[arg(long)]
    input: PathBuf,
    /// Starting position; the brightest candidate when absent.
    #[arg(long, requires = "y_um")]
    x_um: Option<f64>,
    #[arg(long, requires = "x_um")]
    y_um: Option<f64>,
}

#[derive(Debug, Args)]
struct StabilityArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    /// With --drift-um-per-h, also report the linear-drift oracle.
    #[arg(long, requires = "drift_um_per_h")]
    spot_fwhm_um: Option<f64>,
    #[arg(long, requires = "spot_fwhm_um")]
    drift_um_per_h: Option<f64>,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// Built-in scenario id; --config supplies a scenario file instead.
    #[arg(long, required_unless_present = "config")]
    scenario: Option<String>,
    /// Exit 1 when any graded target fails.
    #[arg(long)]
    strict: bool,
}

/// A failed invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    /// `module.Variant`
    pub code: String,
    pub message: String,
    pub exit: i32,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.code, self.message)
    }
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: "cli.Usage".into(),
            message: message.into(),
            exit: 2,
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self {
            code: "cli.Io".into(),
            message: format!("{}: {e}", path.display()),
            exit: 1,
        }
    }

    fn json(path: &Path, e: serde_json::Error) -> Self {
        Self {
            code: "cli.InvalidJson".into(),
            message: format!("{}: {e}", path.display()),
            exit: 2,
        }
    }
}

/// Variants that mean the analysis failed on valid input.
const RUNTIME_VARIANTS: [&str; 9] = [
    "Io",
    "SingularCurvature",
    "NonFinite",
    "FitDiverged",
    "NoConvergence",
    "NoDipDetected",
    "NoPeak",
    "PeakAtBoundary",
    "NoOverlap",
];

fn module_error<E: fmt::Debug + fmt::Display>(module: &str, e: &E) -> CliError {
    let debug = format!("{e:?}");
    let variant: String = debug.chars().take_while(|c| c.is_alphanumeric()).collect();
    let exit = if RUNTIME_VARIANTS.contains(&variant.as_str()) { 1 } else { 2 };
    CliError {
        code: format!("{module}.{variant}"),
        message: e.to_string(),
        exit,
    }
}

macro_rules! module_errors {
    ($($ty:ty => $module:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                module_error($module, &e)
            }
        })*
    };
}

module_errors! {
    TimeTagError => "timetag",
    CorrelationError => "correlator",
    SimError => "emitsim",
    FitError => "fitting",
    SpectrumError => "spectra",
    TomographyError => "tomography",
    ScanError => "scanstab",
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Sim(e) => e.into(),
            PipelineError::Correlation(e) => e.into(),
            PipelineError::Fit(e) => e.into(),
            PipelineError::Spectrum(e) => e.into(),
            PipelineError::Tomography(e) => e.into(),
            PipelineError::Scan(e) => e.into(),
            other => module_error("pipeline", &other),
        }
    }
}

struct Ctx {
    out: Option<PathBuf>,
    seed: Option<u64>,
    config: Option<PathBuf>,
    quiet: bool,
    report_path: Option<PathBuf>,
    plot_dir: Option<PathBuf>,
    report: RunReport,
}

impl Ctx {
    fn open(&mut self, path: &Path) -> Result<BufReader<File>, CliError> {
        self.digest(path)?;
        File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
    }

    fn read_text(&mut self, path: &Path) -> Result<String, CliError> {
        self.digest(path)?;
        fs::read_to_string(path).map_err(|e| CliError::io(path, e))
    }

    fn digest(&mut self, path: &Path) -> Result<(), CliError> {
        let d = InputDigest::of_file(path).map_err(|e| CliError::io(path, e))?;
        self.report.inputs.push(d);
        Ok(())
    }

    fn data_out(&self) -> Result<PathBuf, CliError> {
        self.out
            .clone()
            .ok_or_else(|| CliError::usage("--out is required for this command"))
    }

    fn no_config(&self) -> Result<(), CliError> {
        match &self.config {
            Some(_) => Err(CliError::usage(format!(
                "--config is not used by `{}`",
                self.report.command
            ))),
            None => Ok(()),
        }
    }

    fn say(&self, line: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{line}");
        }
    }

    fn plot(&mut self, name: &str, csv: &str) -> Result<(), CliError> {
        let Some(dir) = &self.plot_dir else {
            return Ok(());
        };
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(format!("{}-{name}.csv", self.report.command));
        fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
        self.report.outputs.push(path.display().to_string());
        Ok(())
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let echo: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli, echo) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Convert(_) => "convert",
        Command::Simulate(_) => "simulate",
        Command::G2(_) => "g2",
        Command::FitG2(_) => "fit-g2",
        Command::FitSaturation(_) => "fit-saturation",
        Command::G2Sweep(_) => "g2-sweep",
        Command::FitSpectrum(_) => "fit-spectrum",
        Command::SelectEmitter(_) => "select-emitter",
        Command::Snr(_) => "snr",
        Command::Tomo(_) => "tomo",
        Command::ScanPeaks(_) => "scan-peaks",
        Command::FitSpot(_) => "fit-spot",
        Command::AxialFit(_) => "axial-fit",
        Command::Stability(_) => "stability",
        Command::Reproduce(_) => "reproduce",
    }
}

fn execute(cli: Cli, echo: Vec<String>) -> Result<i32, CliError> {
    let start = Instant::now();
    let mut ctx = Ctx {
        out: cli.out,
        seed: cli.seed,
        config: cli.config,
        quiet: cli.quiet,
        report_path: cli.report,
        plot_dir: cli.emit_plot_data,
        report: RunReport::new(command_name(&cli.command), echo),
    };
    // Commands whose --out is a data file put the report next to it.
    let mut data_command = false;
    let mut code = 0;
    match cli.command {
        Command::Convert(a) => {
            data_command = true;
            convert(&mut ctx, a)?
        }
        Command::Simulate(a) => {
            data_command = true;
            simulate(&mut ctx, a)?
        }
        Command::G2(a) => {
            data_command = true;
            g2(&mut ctx, a)?
        }
        Command::FitG2(a) => fit_g2_cmd(&mut ctx, a)?,
        Command::FitSaturation(a) => fit_saturation_cmd(&mut ctx, a)?,
        Command::G2Sweep(a) => g2_sweep(&mut ctx, a)?,
        Command::FitSpectrum(a) => fit_spectrum(&mut ctx, a)?,
        Command::SelectEmitter(a) => select_emitter(&mut ctx, a)?,
        Command::Snr(a) => snr(&mut ctx, a)?,
        Command::Tomo(a) => tomo(&mut ctx, a)?,
        Command::ScanPeaks(a) => scan_peaks(&mut ctx, a)?,
        Command::FitSpot(a) => fit_spot(&mut ctx, a)?,
        Command::AxialFit(a) => axial_fit(&mut ctx, a)?,
        Command::Stability(a) => stability(&mut ctx, a)?,
        Command::Reproduce(a) => code = reproduce(&mut ctx, a)?,
    }
    ctx.report.wall_time_s = start.elapsed().as_secs_f64();

    let text = serde_json::to_string_pretty(&ctx.report).expect("report serializes");
    let target = if data_command {
        let out = ctx.data_out()?;
        Some(ctx.report_path.clone().unwrap_or_else(|| {
            let mut p = out.into_os_string();
            p.push(".report.json");
            PathBuf::from(p)
        }))
    } else {
        ctx.out.clone()
    };
    match target {
        Some(path) => fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?,
        None if ctx.report.command == "reproduce" => {}
        None => println!("{text}"),
    }
    Ok(code)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_tags(ctx: &mut Ctx, path: &Path, resolution_ps: u64, channels: Option<u16>) -> Result<TimeTagStream, CliError> {
    let reader = ctx.open(path)?;
    Ok(if is_csv(path) {
        timetag::read_csv(reader, resolution_ps, channels)?
    } else {
        timetag::read_from(reader)?
    })
}

fn write_tags(stream: &TimeTagStream, path: &Path, format: TagFormat) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    match format {
        TagFormat::Csv => timetag::write_csv(stream, file)?,
        TagFormat::Ptag => timetag::write_to(stream, BufWriter::new(file))?,
    }
    Ok(())
}

fn stream_summary(s: &TimeTagStream) -> serde_json::Value {
    json!({
        "records": s.len(),
        "resolution_ps": s.resolution_ps(),
        "channel_count": s.channel_count(),
        "channel_counts": s.channel_counts(),
        "duration_s": s.duration_seconds(),
    })
}

fn convert(ctx: &mut Ctx, a: ConvertArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let out = ctx.data_out()?;
    let format = a
        .to
        .unwrap_or(if is_csv(&out) { TagFormat::Csv } else { TagFormat::Ptag });
    let stream = read_tags(ctx, &a.input, a.resolution_ps, a.channels)?;
    write_tags(&stream, &out, format)?;
    ctx.report.config = json!({
        "input": a.input, "to": format!("{format:?}").to_lowercase(),
        "resolution_ps": a.resolution_ps, "channels": a.channels,
    });
    ctx.report.outputs.push(out.display().to_string());
    ctx.report.results = stream_summary(&stream);
    ctx.say(format_args!("converted {} records to {}", stream.len(), out.display()));
    Ok(())
}

/// Scene from `--config`: a scene JSON or the config echo of a simulate
/// report.
fn load_scene(ctx: &mut Ctx) -> Result<SceneConfig, CliError> {
    let path = ctx
        .config
        .clone()
        .ok_or_else(|| CliError::usage("simulate needs --config scene.json"))?;
    let text = ctx.read_text(&path)?;
    let value = match RunReport::parse(&text) {
        Some(r) => r.config,
        None => serde_json::from_str(&text).map_err(|e| CliError::json(&path, e))?,
    };
    serde_json::from_value(value).map_err(|e| CliError::json(&path, e))
}

fn simulate(ctx: &mut Ctx, a: SimulateArgs) -> Result<(), CliError> {
    let out = ctx.data_out()?;
    let mut scene = load_scene(ctx)?;
    if let Some(seed) = ctx.seed {
        scene.rng_seed = seed;
    }
    if let Some(d) = a.duration_s {
        scene.duration_s = d;
    }
    if let Some(n) = a.tags {
        let r = scene.predicted_rates();
        let total = r.signal_total() + r.noise_total();
        if !(total > 0.0) {
            return Err(CliError::usage("--tags needs a scene with a nonzero click rate"));
        }
        scene.duration_s = n as f64 / total;
    }
    let stream = simulate_scene(&scene)?;
    let format = if is_csv(&out) { TagFormat::Csv } else { TagFormat::Ptag };
    write_tags(&stream, &out, format)?;
    let rates = scene.predicted_rates();
    ctx.report.seeds.push(scene.rng_seed);
    ctx.report.config = serde_json::to_value(&scene).expect("scene serializes");
    ctx.report.outputs.push(out.display().to_string());
    let mut results = stream_summary(&stream);
    results["predicted_rates"] = serde_json::to_value(rates).expect("rates serialize");
    results["predicted_contrast"] = json!(rates.contrast());
    ctx.report.results = results;
    ctx.say(format_args!(
        "simulated {} tags over {:.3} s to {}",
        stream.len(),
        scene.duration_s,
        out.display()
    ));
    Ok(())
}

fn g2(ctx: &mut Ctx, a: G2Args) -> Result<(), CliError> {
    ctx.no_config()?;
    let out = ctx.data_out()?;
    let stream = read_tags(ctx, &a.input, a.resolution_ps, None)?;
    let cfg = CorrelationConfig::from_physical(stream.resolution_ps(), a.bin_ps, a.window_ns, a.ch_a, a.ch_b)?;
    let mut h = correlator::correlate(&stream, &cfg)?;
    if let Some(rho) = a.signal_fraction {
        h = correlator::background_correct(&h, rho)?;
    }
    let file = File::create(&out).map_err(|e| CliError::io(&out, e))?;
    h.write_csv(file).map_err(|e| CliError::io(&out, e))?;
    let zero = h.zero_bin();
    ctx.report.config = json!({
        "input": a.input, "ch_a": a.ch_a, "ch_b": a.ch_b, "bin_ps": a.bin_ps,
        "window_ns": a.window_ns, "signal_fraction": a.signal_fraction,
        "resolution_ps": a.resolution_ps,
    });
    ctx.report.outputs.push(out.display().to_string());
    ctx.report.results = json!({
        "bins": h.len(),
        "normalization": h.normalization,
        "rates": h.rates,
        "duration_s": h.duration_s,
        "zero_bin_g2": h.g2[zero],
        "zero_bin_g2_err": h.g2_err[zero],
        "coincidences": h.raw_counts.iter().sum::<u64>(),
    });
    ctx.say(format_args!(
        "g2 histogram with {} bins, g2 at zero delay {:.4} +- {:.4}",
        h.len(),
        h.g2[zero],
        h.g2_err[zero]
    ));
    Ok(())
}

fn read_histogram(ctx: &mut Ctx, path: &Path) -> Result<CorrelationHistogram, CliError> {
    let reader = ctx.open(path)?;
    Ok(CorrelationHistogram::read_csv(reader)?)
}

fn fit_g2_cmd(ctx: &mut Ctx, a: FitG2Args) -> Result<(), CliError> {
    ctx.no_config()?;
    let h = read_histogram(ctx, &a.input)?;
    let opts = G2FitOptions {
        residuals: a.residuals.into(),
        irf_sigma_ps: a.irf_sigma_ps,
        ..Default::default()
    };
    let f = fit_g2_with(&h, &opts)?;
    ctx.report.config = json!({"input": a.input, "options": opts});
    ctx.report.results = json!({
        "g2_zero": f.g2_zero,
        "g2_zero_err": f.g2_zero_err,
        "beta1": f.beta1(),
        "beta2": f.beta2(),
        "tau1_ps": f.tau1_ps(),
        "tau1_err_ps": f.tau1_err_ps(),
        "tau2_ps": f.tau2_ps(),
        "fit": f,
    });
    ctx.say(format_args!(
        "g2(0) = {:.4} +- {:.4}, tau1 = {:.1} ps",
        f.g2_zero,
        f.g2_zero_err,
        f.tau1_ps()
    ));
    let model = G2Model::binned(h.bin_width_ps()).with_irf(a.irf_sigma_ps.unwrap_or(0.0));
    let rho2 = h.signal_fraction.map_or(1.0, |r| r * r);
    let mut csv = String::from("tau_ps,g2,g2_err,fit\n");
    for (k, t) in h.tau_ps().iter().enumerate() {
        let m = 1.0 + rho2 * (model.value(*t, &f.fit.values) - 1.0);
        csv.push_str(&format!("{t},{},{},{m}\n", h.g2[k], h.g2_err[k]));
    }
    ctx.plot("g2", &csv)
}

fn read_records<T: for<'de> Deserialize<'de>>(ctx: &mut Ctx, path: &Path) -> Result<Vec<T>, CliError> {
    let reader = ctx.open(path)?;
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError {
            code: "cli.Csv".into(),
            message: format!("{}: {e}", path.display()),
            exit: 2,
        })
}

fn fit_saturation_cmd(ctx: &mut Ctx, a: FitSaturationArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let points: Vec<SaturationPoint> = read_records(ctx, &a.input)?;
    let f = fit_saturation(&points, a.background)?;
    ctx.report.config = json!({"input": a.input, "background": a.background});
    ctx.say(format_args!(
        "I_sat = {:.4e} +- {:.2e} /s, P_sat = {:.4} +- {:.4} mW",
        f.i_sat, f.i_sat_err, f.p_sat_mw, f.p_sat_err_mw
    ));
    let mut csv = String::from("power_mw,rate,fit\n");
    for p in &points {
        csv.push_str(&format!("{},{},{}\n", p.power_mw, p.rate, f.rate(p.power_mw)));
    }
    ctx.report.results = json!({"fit": f, "points": points.len()});
    ctx.plot("saturation", &csv)
}

#[derive(Debug, Deserialize, Serialize)]
struct SweepRow {
    power_mw: f64,
    histogram: PathBuf,
}

fn g2_sweep(ctx: &mut Ctx, a: G2SweepArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let rows: Vec<SweepRow> = read_records(ctx, &a.input)?;
    let base = a.input.parent().unwrap_or(Path::new("."));
    let mut sweep = Vec::with_capacity(rows.len());
    for r in &rows {
        let path = base.join(&r.histogram);
        sweep.push((r.power_mw, read_histogram(ctx, &path)?));
    }
    let opts = G2FitOptions {
        irf_sigma_ps: a.irf_sigma_ps,
        ..Default::default()
    };
    let s = g2_vs_power(&sweep, &opts)?;
    ctx.report.config = json!({"input": a.input, "options": opts});
    ctx.say(format_args!(
        "slope {:.4e} +- {:.2e} per mW, R^2 {:.4}, monotone {}",
        s.slope, s.slope_err, s.r_squared, s.monotone_increasing
    ));
    let mut csv = String::from("power_mw,g2_zero,g2_zero_err,fit\n");
    for p in &s.points {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.power_mw,
            p.g2_zero,
            p.g2_zero_err,
            s.intercept + s.slope * p.power_mw
        ));
    }
    ctx.report.results = serde_json::to_value(&s).expect("sweep serializes");
    ctx.plot("g2_vs_power", &csv)
}

fn fit_spectrum(ctx: &mut Ctx, a: FitSpectrumArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let reader = ctx.open(&a.input)?;
    let s = Spectrum::read_csv(reader, a.integration_s)?;
    let f = spectra::fit_voigt_with(
        &s,
        &VoigtFitOptions {
            linear_baseline: a.linear_baseline,
        },
    )?;
    let sel = spectra::match_cwdm(&f);
    ctx.report.config = json!({
        "input": a.input, "integration_s": a.integration_s,
        "linear_baseline": a.linear_baseline,
    });
    ctx.say(format_args!(
        "center {:.3} +- {:.3} nm, FWHM {:.3} +- {:.3} nm, CWDM {} nm {}",
        f.center_nm,
        f.center_err_nm,
        f.voigt_fwhm_nm,
        f.voigt_fwhm_err_nm,
        sel.channel.center_nm,
        if sel.pass { "PASS" } else { "FAIL" }
    ));
    let line = f.line();
    let mut csv = String::from("wavelength_nm,counts,fit\n");
    for (l, c) in s.wavelength_nm.iter().zip(&s.counts) {
        csv.push_str(&format!("{l},{c},{}\n", line.eval(*l)));
    }
    ctx.report.results = json!({"fit": f, "cwdm": sel});
    ctx.plot("spectrum", &csv)
}

fn select_emitter(ctx: &mut Ctx, a: SelectEmitterArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let text = ctx.read_text(&a.fit)?;
    let value = match RunReport::parse(&text) {
        Some(r) => r.results.get("fit").cloned().ok_or_else(|| {
            CliError::usage(format!("{}: report has no results.fit", a.fit.display()))
        })?,
        None => serde_json::from_str(&text).map_err(|e| CliError::json(&a.fit, e))?,
    };
    let f: VoigtFitResult = serde_json::from_value(value).map_err(|e| CliError::json(&a.fit, e))?;
    let sel = spectra::match_cwdm(&f);
    ctx.report.config = json!({"fit": a.fit});
    ctx.say(format_args!(
        "channel {} nm, offset {:+.2} nm, {}",
        sel.channel.center_nm,
        sel.offset_nm,
        if sel.pass { "PASS" } else { "FAIL" }
    ));
    ctx.report.results = serde_json::to_value(&sel).expect("selection serializes");
    Ok(())
}

fn snr(ctx: &mut Ctx, a: SnrArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let filter = match a.channel_nm {
        Some(c) => Some(CwdmChannel::new(c).ok_or_else(|| {
            CliError::usage(format!("{c} nm is not a CWDM channel center"))
        })?),
        None => None,
    };
    let mut source = |rate: Option<f64>, in_band: Option<f64>, spectrum: &Option<PathBuf>, what: &str| {
        match (rate, spectrum) {
            (Some(full_hz), None) => Ok(RateSource::Rate {
                full_hz,
                in_band_hz: in_band,
            }),
            (None, Some(path)) => {
                let reader = ctx.open(path)?;
                Ok(RateSource::Spectrum(Spectrum::read_csv(reader, a.integration_s)?))
            }
            _ => Err(CliError::usage(format!(
                "give exactly one of --{what}-hz and --{what}-spectrum"
            ))),
        }
    };
    let signal = source(a.signal_hz, a.signal_in_band_hz, &a.signal_spectrum, "signal")?;
    let background = source(
        a.background_hz,
        a.background_in_band_hz,
        &a.background_spectrum,
        "background",
    )?;
    let rep = spectra::snr_report(&signal, &background, filter);
    ctx.report.config = json!({
        "signal_hz": a.signal_hz, "signal_in_band_hz": a.signal_in_band_hz,
        "background_hz": a.background_hz, "background_in_band_hz": a.background_in_band_hz,
        "signal_spectrum": a.signal_spectrum, "background_spectrum": a.background_spectrum,
        "integration_s": a.integration_s, "channel_nm": a.channel_nm,
    });
    match rep.snr_in_band {
        Some(v) => ctx.say(format_args!("SNR {:.3} full band, {:.3} in band", rep.snr_full.value(), v.value())),
        None => ctx.say(format_args!("SNR {:.3}", rep.snr_full.value())),
    }
    ctx.report.results = serde_json::to_value(&rep).expect("snr serializes");
    Ok(())
}

fn tomo(ctx: &mut Ctx, a: TomoArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let text = ctx.read_text(&a.counts)?;
    let counts: ProjectionCounts = serde_json::from_str(&text).map_err(|e| CliError::json(&a.counts, e))?;
    let (rho, extra) = match a.method {
        TomoMethod::Mle => {
            let m = tomography::mle_reconstruct(&counts)?;
            let extra = json!({"iterations": m.iterations, "deviance": m.deviance, "intensity": m.intensity});
            (m.rho, extra)
        }
        TomoMethod::Linear => {
            let l = tomography::linear_inversion(&counts)?;
            let extra = json!({"stokes_err": l.stokes_err, "physical": l.physical});
            (l.rho, extra)
        }
    };
    let rep = tomography::polarization_report(&rho);
    let (lp, lm) = rho.eigenvalues();
    ctx.report.config = json!({"counts": a.counts, "method": format!("{:?}", a.method).to_lowercase()});
    ctx.say(format_args!(
        "eigenvalues ({lp:.4}, {lm:.4}), DOP {:.4}",
        rep.degree_of_polarization
    ));
    ctx.report.results = json!({
        "rho": rho,
        "eigenvalues": [lp, lm],
        "dop": rep.degree_of_polarization,
        "stokes": rho.stokes(),
        "polarization": rep,
        "method_details": extra,
    });
    Ok(())
}

fn read_scan(ctx: &mut Ctx, path: &Path) -> Result<ScanMap, CliError> {
    let reader = ctx.open(path)?;
    Ok(ScanMap::read_csv(reader)?)
}

fn scan_peaks(ctx: &mut Ctx, a: ScanPeaksArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let map = read_scan(ctx, &a.input)?;
    let peaks = scanstab::find_emitters(&map, a.threshold_sigma, a.suppression_um)?;
    ctx.report.config = json!({
        "input": a.input, "threshold_sigma": a.threshold_sigma, "suppression_um": a.suppression_um,
    });
    ctx.say(format_args!("{} candidates above {:.1}", peaks.candidates.len(), peaks.threshold));
    let mut csv = String::from("x_um,y_um,peak\n");
    for c in &peaks.candidates {
        csv.push_str(&format!("{},{},{}\n", c.x_um, c.y_um, c.peak));
    }
    ctx.report.results = serde_json::to_value(&peaks).expect("peaks serialize");
    ctx.plot("peaks", &csv)
}

fn fit_spot(ctx: &mut Ctx, a: FitSpotArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let map = read_scan(ctx, &a.input)?;
    let guess = match (a.x_um, a.y_um) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            let peaks = scanstab::find_emitters(&map, 5.0, None)?;
            let c = peaks.candidates.first().ok_or(ScanError::EmptyMap)?;
            (c.x_um, c.y_um)
        }
    };
    let f = scanstab::fit_spot(&map, guess)?;
    ctx.report.config = json!({"input": a.input, "x_um": guess.0, "y_um": guess.1});
    ctx.say(format_args!(
        "spot at ({:.3}, {:.3}) um, FWHM {:.3} +- {:.3} um",
        f.x_um, f.y_um, f.spot_size_um, f.spot_size_err_um
    ));
    ctx.report.results = serde_json::to_value(&f).expect("spot serializes");
    Ok(())
}

fn axial_fit(ctx: &mut Ctx, a: InputArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let reader = ctx.open(&a.input)?;
    let profile = scanstab::read_axial_csv(reader)?;
    let f = scanstab::fit_axial(&profile)?;
    ctx.report.config = json!({"input": a.input});
    ctx.say(format_args!(
        "z_R = {:.4} +- {:.4} um, 80% span fit {:.4} um, data {}{}",
        f.rayleigh_um,
        f.rayleigh_err_um,
        f.fit_range_80_um,
        f.retention_range_80_um
            .map_or("unresolved".to_string(), |r| format!("{r:.4} um")),
        if f.range_mismatch { " (mismatch)" } else { "" }
    ));
    let mut csv = String::from("z_um,counts,fit\n");
    for (z, c) in &profile {
        let fit = f.i0 / (1.0 + ((z - f.z0_um) / f.rayleigh_um).powi(2));
        csv.push_str(&format!("{z},{c},{fit}\n"));
    }
    ctx.report.results = serde_json::to_value(&f).expect("axial fit serializes");
    ctx.plot("axial", &csv)
}

fn stability(ctx: &mut Ctx, a: StabilityArgs) -> Result<(), CliError> {
    ctx.no_config()?;
    let reader = ctx.open(&a.input)?;
    let d = DriftSeries::read_csv(reader)?;
    let r = scanstab::retention_time(&d, a.fraction)?;
    let oracle_s = match (a.spot_fwhm_um, a.drift_um_per_h) {
        (Some(w), Some(v)) => Some(scanstab::drift_retention_oracle(w, v, a.fraction)),
        _ => None,
    };
    ctx.report.config = json!({
        "input": a.input, "fraction": a.fraction,
        "spot_fwhm_um": a.spot_fwhm_um, "drift_um_per_h": a.drift_um_per_h,
    });
    match r.time_s {
        Some(t) => ctx.say(format_args!("retention above {:.0}%: {:.1} min", 100.0 * a.fraction, t / 60.0)),
        None => ctx.say(format_args!("signal never fell below {:.0}%", 100.0 * a.fraction)),
    }
    let smoothed = scanstab::moving_median(&d.intensity, 5);
    let mut csv = String::from("t_s,counts,smoothed\n");
    for ((t, c), s) in d.time_s.iter().zip(&d.intensity).zip(&smoothed) {
        csv.push_str(&format!("{t},{c},{s}\n"));
    }
    ctx.report.results = json!({
        "retention": r,
        "retention_min": r.time_s.map(|t| t / 60.0),
        "oracle_min": oracle_s.map(|t| t / 60.0),
    });
    ctx.plot("drift", &csv)
}

fn reproduce(ctx: &mut Ctx, a: ReproduceArgs) -> Result<i32, CliError> {
    let scenario: Scenario = match (&a.scenario, ctx.config.clone()) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage("give either --scenario or --config, not both"));
        }
        (Some(id), None) => pipeline::builtin_scenario(id)?,
        (None, Some(path)) => {
            let text = ctx.read_text(&path)?;
            let value = match RunReport::parse(&text) {
                Some(r) => r.config,
                None => serde_json::from_str(&text).map_err(|e| CliError::json(&path, e))?,
            };
            serde_json::from_value(value).map_err(|e| CliError::json(&path, e))?
        }
        (None, None) => return Err(CliError::usage("reproduce needs --scenario or --config")),
    };
    let seed = ctx.seed.unwrap_or(scenario.seed);
    let (outcome, cmp) = pipeline::run_scenario(&scenario, Some(seed))?;
    if !ctx.quiet {
        print!("{cmp}");
    }
    for (name, csv) in &outcome.plot_data {
        let name = format!("{}-{name}", scenario.id);
        ctx.plot(&name, csv)?;
    }
    ctx.report.seeds.push(seed);
    ctx.report.config = serde_json::to_value(&scenario).expect("scenario serializes");
    ctx.report.results = json!({
        "comparison": cmp,
        "achieved": outcome.achieved,
        "model": outcome.model,
        "details": outcome.details,
    });
    Ok(if a.strict && !cmp.all_pass() { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes_are_module_qualified() {
        let e: CliError = FitError::SingularCurvature.into();
        assert_eq!(e.code, "fitting.SingularCurvature");
        assert_eq!(e.exit, 1);
        let e: CliError = TimeTagError::BadMagic(*b"NOPE").into();
        assert_eq!(e.code, "timetag.BadMagic");
        assert_eq!(e.exit, 2);
        let e: CliError = PipelineError::UnknownScenario("x".into()).into();
        assert_eq!(e.code, "pipeline.UnknownScenario");
        assert_eq!(e.exit, 2);
        let e: CliError = PipelineError::Fit(FitError::NonFinite).into();
        assert_eq!(e.code, "fitting.NonFinite");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["photonforge", "tomo", "--bogus"]), 2);
        assert_eq!(run(["photonforge"]), 2);
        assert_eq!(run(["photonforge", "--help"]), 0);
    }
}
