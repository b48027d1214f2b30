mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad input data or parameters.
    Input(String),
    /// Malformed invocation that argument parsing could not catch.
    Usage(String),
    /// A fit finished without converging; its result was still written.
    NotConverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Usage(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "error[input]: {m}"),
            CliError::Usage(m) => write!(f, "error[usage]: {m}"),
            CliError::NotConverged(m) => write!(f, "error[not-converged]: {m}"),
        }
    }
}

macro_rules! input_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}

input_errors!(
    spinshelve::Error,
    spinshelve::config::ConfigError,
    spinshelve::experiments::ExperimentError,
    spinshelve::fitting::FitError,
    spinshelve::model::ModelError,
    spinshelve::pulseseq::SeqError,
    spinshelve::detector::DetectorError
);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", CliError::Usage(format!("--jobs: {e}")));
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(&cli.global, a),
        Command::Experiment(a) => commands::experiment(&cli.global, a),
        Command::Rerun(a) => commands::rerun(&cli.global, a),
        Command::Fit(a) => commands::fit(&cli.global, a),
        Command::Compile(a) => commands::compile(&cli.global, a),
        Command::Calibrate(a) => commands::calibrate(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
