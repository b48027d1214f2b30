//! Parameter presets and run configuration.
//!
//! A preset is a TOML file holding a calibrated rate set together with the
//! laser and microwave characteristics of a setup. The observables the rates
//! were calibrated against are kept alongside so they can be re-derived.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::{DEFAULT_BIN_WIDTH_NS, DEFAULT_STEADY_WINDOW_NS};
use crate::kinetics::KineticsConfig;
use crate::model::{calibrate_rates, CalibrationPriors, CalibrationTargets, ModelError, SpinSystemConfig};

pub const FORMAT_VERSION: u32 = 1;

/// Environment variable naming a directory searched for `<name>.toml` presets.
pub const PRESETS_ENV: &str = "SPINSHELVE_PRESETS";

const BUILTIN: &[(&str, &str)] = &[
    ("room_temperature", include_str!("../../../presets/room_temperature.toml")),
    ("room_temperature_1p44", include_str!("../../../presets/room_temperature_1p44.toml")),
    ("cryo_4k", include_str!("../../../presets/cryo_4k.toml")),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("preset `{name}` not found (searched: {})", searched.join(", "))]
    NotFound { name: String, searched: Vec<String> },
    #[error("cannot read {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("cannot parse {origin}: {msg}")]
    Parse { origin: String, msg: String },
    #[error("unsupported preset format_version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("missing configuration key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid configuration value `{key}` = {value}: {reason}")]
    Invalid {
        key: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn invalid(key: &'static str, value: f64, reason: &'static str) -> ConfigError {
    ConfigError::Invalid { key, value, reason }
}

fn require_positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, v, "must be > 0"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserConfig {
    /// Reference pump rate, s⁻¹.
    pub k_exp: f64,
    /// Exponential rise time constant, ns.
    pub t_rise_ns: f64,
    /// Exponential fall time constant, ns.
    pub t_fall_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwConfig {
    pub rabi_period_ns: f64,
    pub t2rho_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub targets: CalibrationTargets,
    pub priors: CalibrationPriors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub format_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub system: SpinSystemConfig,
    pub laser: LaserConfig,
    pub mw: MwConfig,
    pub calibration: Option<CalibrationRecord>,
}

impl Preset {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let p: Preset = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            msg: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("preset is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Self::from_toml_str(text, n).expect("shipped presets are valid"))
    }

    /// Resolve a preset by file path, then `$SPINSHELVE_PRESETS/<name>.toml`,
    /// then the built-in set.
    pub fn resolve(name_or_path: &str) -> Result<Self, ConfigError> {
        let direct = Path::new(name_or_path);
        let mut searched = Vec::new();
        if direct.extension().is_some() || name_or_path.contains(std::path::MAIN_SEPARATOR) {
            if direct.is_file() {
                return Self::load(direct);
            }
            searched.push(direct.display().to_string());
        }
        if let Some(dir) = std::env::var_os(PRESETS_ENV) {
            let candidate = PathBuf::from(dir).join(format!("{name_or_path}.toml"));
            if candidate.is_file() {
                return Self::load(&candidate);
            }
            searched.push(candidate.display().to_string());
        }
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        searched.push(format!("built-in presets ({})", Self::builtin_names().collect::<Vec<_>>().join(", ")));
        Err(ConfigError::NotFound {
            name: name_or_path.to_string(),
            searched,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ConfigError::Version {
                found: self.format_version,
            });
        }
        self.system.validate()?;
        require_positive("laser.k_exp", self.laser.k_exp)?;
        for (key, v) in [("laser.t_rise_ns", self.laser.t_rise_ns), ("laser.t_fall_ns", self.laser.t_fall_ns)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(key, v, "must be >= 0"));
            }
        }
        require_positive("mw.rabi_period_ns", self.mw.rabi_period_ns)?;
        require_positive("mw.t2rho_ns", self.mw.t2rho_ns)?;
        Ok(())
    }

    pub fn hyperfine_a_mhz(&self) -> Result<f64, ConfigError> {
        self.system
            .hyperfine_a_mhz
            .ok_or(ConfigError::MissingKey("system.hyperfine_a_mhz"))
    }

    /// Re-run the calibration recorded in the preset and report the largest
    /// relative deviation from the shipped rates.
    pub fn calibration_deviation(&self) -> Result<Option<f64>, ConfigError> {
        let Some(cal) = &self.calibration else {
            return Ok(None);
        };
        let fresh = calibrate_rates(&cal.targets, &cal.priors)?;
        let shipped = &self.system.rates;
        let pairs = [
            (fresh.k_r, shipped.k_r),
            (fresh.gamma0, shipped.gamma0),
            (fresh.gamma1, shipped.gamma1),
            (fresh.kappa0, shipped.kappa0),
            (fresh.kappa1, shipped.kappa1),
            (fresh.k_sl_0to1, shipped.k_sl_0to1),
            (fresh.k_sl_1to0, shipped.k_sl_1to0),
        ];
        Ok(Some(pairs.iter().fold(0.0f64, |m, &(a, b)| {
            let scale = a.abs().max(b.abs());
            if scale == 0.0 {
                m
            } else {
                m.max((a - b).abs() / scale)
            }
        })))
    }
}

/// Which deviation band defines the 95 % settling time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T95Band {
    /// `|n − n_ss| ≤ 0.05·n_ss`: within 5 % of the steady-state population.
    #[default]
    SteadyState,
    /// `|n − n_ss| ≤ 0.05·|n(0) − n_ss|`: 95 % of the initial deviation removed.
    InitialDeviation,
}

/// Everything besides the protocol grids that determines an experiment's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Draw Poisson shot noise instead of using expectation values.
    pub noise: bool,
    pub shots: u64,
    pub efficiency: f64,
    pub bin_width_ns: f64,
    /// Steady-state normalization window relative to the read-out on-edge, ns.
    pub steady_window_ns: (f64, f64),
    /// Integration window relative to the read-out on-edge, ns.
    pub readout_window_ns: (f64, f64),
    pub median_filter: bool,
    pub t95_band: T95Band,
    pub kinetics: KineticsConfig,
}

impl RunConfig {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            seed: 0,
            noise: false,
            shots: 1_000_000,
            efficiency: 1.0,
            bin_width_ns: DEFAULT_BIN_WIDTH_NS,
            steady_window_ns: DEFAULT_STEADY_WINDOW_NS,
            readout_window_ns: (0.0, 60.0),
            median_filter: true,
            t95_band: T95Band::default(),
            kinetics: KineticsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.preset.validate()?;
        if self.shots == 0 {
            return Err(invalid("shots", 0.0, "must be >= 1"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid("efficiency", self.efficiency, "must lie in (0, 1]"));
        }
        require_positive("bin_width_ns", self.bin_width_ns)?;
        let (a, b) = self.steady_window_ns;
        if !(a >= 0.0 && b > a) {
            return Err(invalid("steady_window_ns", b - a, "needs 0 <= start < end"));
        }
        let (a, b) = self.readout_window_ns;
        if !(a >= 0.0 && b > a) {
            return Err(invalid("readout_window_ns", b - a, "needs 0 <= start < end"));
        }
        self.kinetics.validate().map_err(|e| match e {
            crate::kinetics::KineticsError::Parameter { name, value, reason } => invalid(name, value, reason),
            _ => invalid("kinetics", f64::NAN, "invalid"),
        })
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(&json))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_presets_load() {
        for name in Preset::builtin_names() {
            let p = Preset::builtin(name).unwrap();
            assert_eq!(p.name, name);
            let back = Preset::from_toml_str(&p.to_toml(), "round trip").unwrap();
            assert_eq!(back, p);
        }
        assert!(Preset::builtin("nope").is_none());
    }

    #[test]
    fn shipped_rates_match_calibration() {
        for name in Preset::builtin_names() {
            let p = Preset::builtin(name).unwrap();
            let dev = p.calibration_deviation().unwrap().unwrap();
            assert!(dev < 1e-6, "{name}: {dev:e}");
        }
    }

    #[test]
    fn resolve_reports_search_path() {
        let err = Preset::resolve("/no/such/preset.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("/no/such/preset.toml"), "{msg}");
        assert!(Preset::resolve("room_temperature").is_ok());
    }

    #[test]
    fn version_and_keys_checked() {
        let p = Preset::builtin("room_temperature").unwrap();
        let text = p.to_toml().replace("format_version = 1", "format_version = 9");
        assert!(matches!(
            Preset::from_toml_str(&text, "x"),
            Err(ConfigError::Version { found: 9 })
        ));
        assert_eq!(
            p.hyperfine_a_mhz(),
            Err(ConfigError::MissingKey("system.hyperfine_a_mhz"))
        );
        let text = format!("bogus = 1\n{}", p.to_toml());
        assert!(matches!(Preset::from_toml_str(&text, "x"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::new(Preset::builtin("room_temperature").unwrap());
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn run_config_validation() {
        let mut c = RunConfig::new(Preset::builtin("room_temperature").unwrap());
        assert!(c.validate().is_ok());
        c.bin_width_ns = 0.0;
        assert!(c.validate().is_err());
        c.bin_width_ns = 1.0;
        c.kinetics.dt_max_ns = 0.0;
        assert!(c.validate().is_err());
    }
}
