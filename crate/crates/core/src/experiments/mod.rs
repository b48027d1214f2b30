//! End-to-end measurement protocols.
//!
//! Each orchestrator compiles a pulse sequence, simulates every sweep point,
//! turns the trajectories into photon-counting histograms and fits the derived
//! metric. The result is an [`ExperimentOutput`]: a serializable report plus the
//! CSV tables behind the corresponding figure.

mod init;
mod odmr;
mod protocol;
mod rabi;
mod recovery;
mod t1;

pub use init::{initialization_scan, t95_time, InitParams};
pub use odmr::{
    count_resolved_dips, hyperfine_weights, odmr_contrast, odmr_spectrum, OdmrParams, GAMMA_E_GHZ_PER_MT,
};
pub use protocol::{
    compile_protocol, load_protocol, protocol_source, MwDrive, Simulator, Span, PROTOCOLS,
    PROTOCOL_RESOLUTION_NS,
};
pub use rabi::{rabi_buffer_scan, RabiParams};
pub use recovery::{pl_recovery_scan, settle_time_ns, RecoveryParams, K_EXP_POWER_MW, MAX_POWER_MW};
pub use t1::{t1_scan, T1Params, LONG_RANGE_MIN_NS, SHORT_RANGE_MAX_NS};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Preset, RunConfig};
use crate::detector::DetectorError;
use crate::fitting::{FitError, FitResult};
use crate::kinetics::KineticsError;
use crate::model::ModelError;
use crate::pulseseq::SeqError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Sequence(#[from] SeqError),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid {what}: {reason}")]
    InvalidInput { what: &'static str, reason: String },
    #[error("laser and microwave are both on at t = {t_ns} ns")]
    LaserDuringMw { t_ns: f64 },
    #[error("protocol has no `{0}` channel")]
    MissingChannel(&'static str),
    #[error(
        "threshold {threshold:.4e} never held until the end of the trajectory; \
         closest approach {closest:.4e} at t = {t_ns} ns"
    )]
    NotReached { threshold: f64, closest: f64, t_ns: f64 },
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
}

pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidInput {
        what,
        reason: reason.into(),
    }
}

pub(crate) fn check_positive(what: &'static str, values: &[f64]) -> Result<(), ExperimentError> {
    if values.is_empty() {
        return Err(invalid(what, "empty"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(invalid(what, format!("values must be finite and > 0, got {v}")));
    }
    Ok(())
}

/// Column-oriented numeric table written as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    /// File name, e.g. `fig2c_overshoot_vs_tau.csv`.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn new(name: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// What to run, with its sweep grids. Stored in every report so that a run can
/// be repeated from the report alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    PlRecovery(RecoveryParams),
    InitTime(InitParams),
    RabiBuffer(RabiParams),
    T1(T1Params),
    OdmrSpectrum(OdmrParams),
}

impl Experiment {
    pub const NAMES: [&'static str; 5] = ["pl-recovery", "init-time", "rabi-buffer", "t1", "odmr-spectrum"];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::PlRecovery(_) => "pl-recovery",
            Experiment::InitTime(_) => "init-time",
            Experiment::RabiBuffer(_) => "rabi-buffer",
            Experiment::T1(_) => "t1",
            Experiment::OdmrSpectrum(_) => "odmr-spectrum",
        }
    }

    /// Default grids for a named experiment; power levels follow the preset.
    pub fn default_for(name: &str, preset: &Preset) -> Option<Self> {
        Some(match name {
            "pl-recovery" => Experiment::PlRecovery(RecoveryParams::defaults(preset)),
            "init-time" => Experiment::InitTime(InitParams::default()),
            "rabi-buffer" => Experiment::RabiBuffer(RabiParams::default()),
            "t1" => Experiment::T1(T1Params::default()),
            "odmr-spectrum" => Experiment::OdmrSpectrum(OdmrParams::default()),
            _ => return None,
        })
    }

    pub fn run(&self, cfg: &RunConfig) -> Result<ExperimentOutput, ExperimentError> {
        cfg.validate()?;
        let mut out = match self {
            Experiment::PlRecovery(p) => pl_recovery_scan(cfg, &p.taus_ns, &p.k_e_levels)?,
            Experiment::InitTime(p) => initialization_scan(cfg, &p.k_e_grid)?,
            Experiment::RabiBuffer(p) => rabi_buffer_scan(cfg, &p.buffers_ns, &p.mw_durations_ns, cfg.readout_window_ns)?,
            Experiment::T1(p) => t1_scan(cfg, &p.taus_ns)?,
            Experiment::OdmrSpectrum(p) => odmr_spectrum(cfg, p)?,
        };
        out.report.provenance.request = Some(self.clone());
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    /// SHA-256 of the embedded run configuration.
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub request: Option<Experiment>,
}

impl Provenance {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg.clone(),
            request: None,
        }
    }
}

/// Sweep results. Every metric series has one entry per swept value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub swept_variable: String,
    #[serde(with = "crate::io::float::vec")]
    pub values: Vec<f64>,
    #[serde(with = "crate::io::float::map_vec")]
    pub metrics: BTreeMap<String, Vec<f64>>,
    pub fits: BTreeMap<String, FitResult>,
    #[serde(with = "crate::io::float::map")]
    pub summary: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn new(protocol: &str, swept_variable: &str, values: Vec<f64>, cfg: &RunConfig) -> Self {
        Self {
            protocol: protocol.to_string(),
            swept_variable: swept_variable.to_string(),
            values,
            metrics: BTreeMap::new(),
            fits: BTreeMap::new(),
            summary: BTreeMap::new(),
            notes: Vec::new(),
            provenance: Provenance::new(cfg),
        }
    }

    /// Add a per-point series; its length must match the sweep.
    pub fn add_metric(&mut self, name: impl Into<String>, series: Vec<f64>) {
        assert_eq!(series.len(), self.values.len(), "metric length must equal sweep length");
        self.metrics.insert(name.into(), series);
    }

    pub fn is_consistent(&self) -> bool {
        self.metrics.values().all(|m| m.len() == self.values.len())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub tables: Vec<DataTable>,
}

impl ExperimentOutput {
    /// Write `report.json` and every table into `dir`; returns the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, crate::Error> {
        let mut written = Vec::new();
        let path = dir.join("report.json");
        crate::io::write_atomic(&path, self.report.to_json().as_bytes())?;
        written.push(path);
        for t in &self.tables {
            let path = dir.join(&t.name);
            crate::io::write_atomic(&path, t.to_csv().as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }
}

/// `{:e}` label for rates, e.g. `2.7e7`.
pub(crate) fn rate_label(k: f64) -> String {
    format!("{k:e}")
}

/// Geometric grid with `per_decade` points per decade, endpoints included.
pub fn log_grid(start: f64, stop: f64, per_decade: usize) -> Vec<f64> {
    let decades = (stop / start).log10();
    let n = (decades * per_decade as f64).round().max(1.0) as usize;
    (0..=n)
        .map(|i| match i {
            0 => start,
            i if i == n => stop,
            i => start * 10f64.powf(decades * i as f64 / n as f64),
        })
        .collect()
}

/// Inclusive arithmetic grid.
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    crate::pulseseq::SweepDecl {
        name: String::new(),
        values: crate::pulseseq::SweepValues::Range { start, stop, step },
    }
    .points()
}
