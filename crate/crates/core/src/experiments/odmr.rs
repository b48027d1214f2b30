//! Continuous-wave ODMR line shape: two Zeeman-split dip groups, each split by
//! the hyperfine interaction with the neighbouring nuclei.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

use super::{invalid, linear_grid, DataTable, ExperimentError, ExperimentOutput, ExperimentReport};

/// Electron gyromagnetic ratio, GHz per mT.
pub const GAMMA_E_GHZ_PER_MT: f64 = 0.028024;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrParams {
    pub f_start_ghz: f64,
    pub f_stop_ghz: f64,
    pub f_step_ghz: f64,
    pub b_field_mt: f64,
    /// Full width at half maximum of each hyperfine line, MHz.
    pub linewidth_mhz: f64,
    /// Peak dip of a single line of unit weight, relative to the off-resonant PL.
    pub depth: f64,
    pub n_nuclei: u32,
    pub nuclear_spin: f64,
}

impl Default for OdmrParams {
    /// 3.0–4.0 GHz at a field that puts the groups 0.3 GHz either side of D.
    fn default() -> Self {
        Self {
            f_start_ghz: 3.0,
            f_stop_ghz: 4.0,
            f_step_ghz: 0.0005,
            b_field_mt: 0.3 / GAMMA_E_GHZ_PER_MT,
            linewidth_mhz: 20.0,
            depth: 0.05,
            n_nuclei: 3,
            nuclear_spin: 1.0,
        }
    }
}

/// Distribution of the total projection of `n` spins `spin` (m_I from −nI to nI).
pub fn hyperfine_weights(n_nuclei: u32, spin: f64) -> Result<Vec<f64>, ExperimentError> {
    let two_i = 2.0 * spin;
    if !(spin > 0.0) || (two_i - two_i.round()).abs() > 1e-12 {
        return Err(invalid("nuclear spin", format!("must be a positive multiple of 1/2, got {spin}")));
    }
    let states = two_i.round() as usize + 1;
    let mut w = vec![1.0];
    for _ in 0..n_nuclei {
        let mut next = vec![0.0; w.len() + states - 1];
        for (i, &x) in w.iter().enumerate() {
            for slot in &mut next[i..i + states] {
                *slot += x;
            }
        }
        w = next;
    }
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Relative PL change at each frequency (negative at resonance).
#[allow(clippy::too_many_arguments)]
pub fn odmr_contrast(
    f_ghz: &[f64],
    d_gs_ghz: f64,
    b_field_mt: f64,
    hyperfine_a_mhz: f64,
    linewidth_mhz: f64,
    depth: f64,
    n_nuclei: u32,
    nuclear_spin: f64,
) -> Result<Vec<f64>, ExperimentError> {
    if !(linewidth_mhz > 0.0) {
        return Err(invalid("linewidth", format!("must be > 0, got {linewidth_mhz}")));
    }
    if !(b_field_mt >= 0.0) {
        return Err(invalid("b_field", format!("must be >= 0, got {b_field_mt}")));
    }
    let weights = hyperfine_weights(n_nuclei, nuclear_spin)?;
    let half = (weights.len() - 1) as f64 / 2.0;
    let sigma = linewidth_mhz * 1e-3 / FWHM_PER_SIGMA;
    let split = GAMMA_E_GHZ_PER_MT * b_field_mt;
    let mut lines = Vec::with_capacity(2 * weights.len());
    for centre in [d_gs_ghz - split, d_gs_ghz + split] {
        for (j, &w) in weights.iter().enumerate() {
            lines.push((centre + (j as f64 - half) * hyperfine_a_mhz * 1e-3, w));
        }
    }
    Ok(f_ghz
        .iter()
        .map(|&f| {
            -depth
                * lines
                    .iter()
                    .map(|&(c, w)| w * (-(f - c).powi(2) / (2.0 * sigma * sigma)).exp())
                    .sum::<f64>()
        })
        .collect())
}

/// Number of strict local minima, a proxy for resolved lines.
pub fn count_resolved_dips(y: &[f64]) -> usize {
    y.windows(3).filter(|w| w[1] < w[0] && w[1] < w[2]).count()
}

pub fn odmr_spectrum(cfg: &RunConfig, p: &OdmrParams) -> Result<ExperimentOutput, ExperimentError> {
    let a = cfg.preset.hyperfine_a_mhz()?;
    if !(p.f_step_ghz > 0.0) || !(p.f_stop_ghz > p.f_start_ghz) {
        return Err(invalid("frequency grid", format!("{}..{} step {}", p.f_start_ghz, p.f_stop_ghz, p.f_step_ghz)));
    }
    let f = linear_grid(p.f_start_ghz, p.f_stop_ghz, p.f_step_ghz);
    let d = cfg.preset.system.d_gs_ghz;
    let c = odmr_contrast(&f, d, p.b_field_mt, a, p.linewidth_mhz, p.depth, p.n_nuclei, p.nuclear_spin)?;

    let mut report = ExperimentReport::new("fig1c_odmr", "frequency_ghz", f.clone(), cfg);
    let split = GAMMA_E_GHZ_PER_MT * p.b_field_mt;
    report.summary.insert("group_low_ghz".into(), d - split);
    report.summary.insert("group_high_ghz".into(), d + split);
    report.summary.insert("hyperfine_a_mhz".into(), a);
    report.summary.insert("resolved_dips".into(), count_resolved_dips(&c) as f64);
    report.add_metric("contrast", c.clone());

    let mut table = DataTable::new("fig1c_spectrum.csv", vec!["frequency_ghz".into(), "contrast".into()]);
    table.rows = f.iter().zip(&c).map(|(x, y)| vec![*x, *y]).collect();
    Ok(ExperimentOutput {
        report,
        tables: vec![table],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ConfigError, Preset};

    #[test]
    fn weights_small_cases() {
        assert_eq!(hyperfine_weights(0, 1.0).unwrap(), vec![1.0]);
        let w = hyperfine_weights(1, 1.0).unwrap();
        assert_eq!(w, vec![1.0 / 3.0; 3]);
        assert_eq!(hyperfine_weights(2, 0.5).unwrap(), vec![0.25, 0.5, 0.25]);
        assert!(hyperfine_weights(1, 0.3).is_err());
        assert!(hyperfine_weights(1, 0.0).is_err());
    }

    #[test]
    fn missing_hyperfine_is_a_config_error() {
        let cfg = RunConfig::new(Preset::builtin("room_temperature").unwrap());
        let err = odmr_spectrum(&cfg, &OdmrParams::default()).unwrap_err();
        assert!(matches!(err, ExperimentError::Config(ConfigError::MissingKey(k)) if k.contains("hyperfine")));
    }

    #[test]
    fn groups_sit_at_zeeman_positions() {
        let mut cfg = RunConfig::new(Preset::builtin("room_temperature").unwrap());
        cfg.preset.system.hyperfine_a_mhz = Some(47.0);
        let out = odmr_spectrum(&cfg, &OdmrParams::default()).unwrap();
        assert!((out.report.summary["group_low_ghz"] - 3.19).abs() < 1e-9);
        assert!((out.report.summary["group_high_ghz"] - 3.79).abs() < 1e-9);
    }

    #[test]
    fn zero_field_single_group() {
        let f = linear_grid(3.0, 4.0, 0.001);
        let c = odmr_contrast(&f, 3.49, 0.0, 47.0, 200.0, 0.05, 3, 1.0).unwrap();
        let (imin, _) = c.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((f[imin] - 3.49).abs() < 1.5e-3);
        assert_eq!(count_resolved_dips(&c), 1);
    }
}
