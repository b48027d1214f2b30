use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "spinshelve", version, about = "Five-level optical-cycle simulator for triplet spin defects")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Parameter preset: a built-in name, a name under $SPINSHELVE_PRESETS, or a TOML path.
    #[arg(long, global = true, default_value = "room_temperature")]
    pub preset: String,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Draw Poisson shot noise instead of using expectation values.
    #[arg(long, global = true)]
    pub noise: bool,
    /// Repetitions per sweep point.
    #[arg(long, global = true)]
    pub shots: Option<u64>,
    /// Histogram bin width, e.g. `0.1ns`.
    #[arg(long, global = true, value_parser = parse_ns)]
    pub bin_width: Option<f64>,
    /// Worker threads for sweep points (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Also write a gnuplot script next to each CSV.
    #[arg(long, global = true)]
    pub gnuplot: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one pulse sequence and write the read-out trajectory.
    Simulate(SimulateArgs),
    /// Run a measurement protocol with its default grids.
    Experiment(ExperimentArgs),
    /// Repeat the run recorded in a report.json.
    Rerun(RerunArgs),
    /// Fit a model to two- or three-column CSV data (x, y[, sigma]).
    Fit(FitArgs),
    /// Compile a pulse sequence into channel timelines.
    Compile(CompileArgs),
    /// Recompute a preset's rates from its calibration targets.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Sequence file, or the name of a shipped protocol.
    #[arg(long)]
    pub pseq: String,
    /// Sweep variable binding `name=value`, repeatable.
    #[arg(long = "bind", value_parser = parse_binding)]
    pub bindings: Vec<(String, f64)>,
    /// Shorthand for `--bind tau=...`.
    #[arg(long, value_parser = parse_ns)]
    pub tau: Option<f64>,
    /// Trajectory sampling step.
    #[arg(long, value_parser = parse_ns, default_value = "0.1ns")]
    pub dt: f64,
    /// Plateau pump rate in 1/s (default: the preset's k_exp).
    #[arg(long)]
    pub k_e: Option<f64>,
    /// Microwave action: `off`, `rabi`, or a fixed transfer fraction in [0, 1].
    /// Defaults to `rabi` when the sequence has an `mw` channel.
    #[arg(long)]
    pub mw: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    PlRecovery,
    InitTime,
    RabiBuffer,
    T1,
    OdmrSpectrum,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::PlRecovery => "pl-recovery",
            ExperimentName::InitTime => "init-time",
            ExperimentName::RabiBuffer => "rabi-buffer",
            ExperimentName::T1 => "t1",
            ExperimentName::OdmrSpectrum => "odmr-spectrum",
        }
    }
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    pub name: ExperimentName,
    /// Hyperfine constant in MHz (overrides the preset).
    #[arg(long)]
    pub hyperfine_a: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    pub report: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModelName {
    ExpDecay,
    ExpRecovery,
    DampedSin,
    DoubleGaussian,
    PowerLaw,
    Linear,
}

impl ModelName {
    pub fn model(self) -> spinshelve::fitting::FitModel {
        use spinshelve::fitting::FitModel;
        match self {
            ModelName::ExpDecay => FitModel::ExpDecay,
            ModelName::ExpRecovery => FitModel::ExpRecovery,
            ModelName::DampedSin => FitModel::DampedSin,
            ModelName::DoubleGaussian => FitModel::DoubleGaussian,
            ModelName::PowerLaw => FitModel::PowerLaw,
            ModelName::Linear => FitModel::Linear,
        }
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub model: ModelName,
    pub csv: PathBuf,
    /// Column for x, by header name or 0-based index.
    #[arg(long, default_value = "0")]
    pub x: String,
    /// Column for y.
    #[arg(long, default_value = "1")]
    pub y: String,
    /// Column with 1σ uncertainties; by default the third column if present.
    #[arg(long)]
    pub sigma: Option<String>,
    /// Only fit rows with x in `lo:hi`.
    #[arg(long, value_parser = parse_range)]
    pub range: Option<(f64, f64)>,
    /// Also try jittered starting points (damped_sin).
    #[arg(long)]
    pub multistart: bool,
}

#[derive(Args, Debug)]
pub struct CompileArgs {
    /// Sequence file, or the name of a shipped protocol.
    pub pseq: String,
    #[arg(long = "bind", value_parser = parse_binding)]
    pub bindings: Vec<(String, f64)>,
    /// Expand a sweep, `name=start:stop:step`; one timeline file per point.
    #[arg(long, value_parser = parse_sweep)]
    pub sweep: Option<(String, f64, f64, f64)>,
    /// Edge grid of the compiled timeline.
    #[arg(long, value_parser = parse_ns, default_value = "1ns")]
    pub resolution: f64,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Write the recalibrated preset here instead of printing it.
    #[arg(long)]
    pub write: Option<PathBuf>,
}

/// Duration with an optional unit (`ns` when absent), in ns.
pub fn parse_ns(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let split = s.trim_end_matches(char::is_alphabetic).len();
    let (num, unit) = s.split_at(split);
    let v: f64 = num.trim().parse().map_err(|_| format!("`{s}` is not a duration"))?;
    let scale = match unit {
        "" | "ns" => 1.0,
        "ps" => 1e-3,
        "us" | "µs" => 1e3,
        "ms" => 1e6,
        "s" => 1e9,
        other => return Err(format!("unknown time unit `{other}`")),
    };
    Ok(v * scale)
}

fn parse_binding(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    Ok((name.trim().to_string(), parse_ns(value)?))
}

fn parse_sweep(s: &str) -> Result<(String, f64, f64, f64), String> {
    let (name, spec) = s.split_once('=').ok_or_else(|| format!("expected name=start:stop:step, got `{s}`"))?;
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, c] = parts[..] else {
        return Err(format!("expected start:stop:step, got `{spec}`"));
    };
    Ok((name.trim().to_string(), parse_ns(a)?, parse_ns(b)?, parse_ns(c)?))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let lo = a.trim().parse().map_err(|_| format!("bad lower bound `{a}`"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad upper bound `{b}`"))?;
    Ok((lo, hi))
}
