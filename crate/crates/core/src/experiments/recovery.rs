//! PL recovery after a dark interval: the overshoot at the read-out onset
//! tracks how much of the shelved population has returned to the ground state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Preset, RunConfig};
use crate::detector::overshoot_ratio;
use crate::fitting::{fit, FitModel, FitOptions};

use super::{
    check_positive, compile_protocol, linear_grid, load_protocol, rate_label, DataTable, ExperimentError,
    ExperimentOutput, ExperimentReport, MwDrive, Simulator, Span,
};

/// Laser power at which the pump rate equals `k_exp`, mW.
pub const K_EXP_POWER_MW: f64 = 19.0;
/// Full laser power, mW.
pub const MAX_POWER_MW: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryParams {
    pub taus_ns: Vec<f64>,
    /// Plateau pump rates, s⁻¹.
    pub k_e_levels: Vec<f64>,
}

impl RecoveryParams {
    /// τ = 2..150 ns in 2 ns steps at 10 %, 20 %, 50 % and 100 % of full
    /// laser power, with the pump rate scaled linearly from `k_exp`.
    pub fn defaults(preset: &Preset) -> Self {
        let k_max = preset.laser.k_exp * MAX_POWER_MW / K_EXP_POWER_MW;
        Self {
            taus_ns: linear_grid(2.0, 150.0, 2.0),
            k_e_levels: [0.1, 0.2, 0.5, 1.0].iter().map(|f| f * k_max).collect(),
        }
    }
}

/// Dark time after which the excited state and the laser fall flank have
/// decayed to 1 %, ns. Before that the overshoot is not a single exponential
/// in τ.
pub fn settle_time_ns(cfg: &RunConfig) -> f64 {
    let r = &cfg.preset.system.rates;
    let es_ns = 1e9 / (r.k_r + r.gamma0.min(r.gamma1));
    100f64.ln() * es_ns.max(cfg.preset.laser.t_fall_ns)
}

pub fn pl_recovery_scan(cfg: &RunConfig, taus: &[f64], k_e_levels: &[f64]) -> Result<ExperimentOutput, ExperimentError> {
    check_positive("taus", taus)?;
    check_positive("k_e_levels", k_e_levels)?;
    let spec = load_protocol("fig2_recovery")?;
    let sim = Simulator::new(cfg);

    let points: Vec<(usize, usize)> = (0..k_e_levels.len())
        .flat_map(|l| (0..taus.len()).map(move |i| (l, i)))
        .collect();
    let ratios = points
        .par_iter()
        .enumerate()
        .map(|(n, &(l, i))| {
            let tl = compile_protocol(&spec, &[("tau", taus[i])])?;
            let len = sim.readout_length(&tl)?;
            let traj = sim.run(&tl, k_e_levels[l], MwDrive::Off, &[Span::new(0.0, len, cfg.bin_width_ns)])?;
            let hist = sim.histogram(&traj[0], n)?;
            Ok(overshoot_ratio(&hist, cfg.steady_window_ns, cfg.median_filter)?)
        })
        .collect::<Result<Vec<f64>, ExperimentError>>()?;

    let mut report = ExperimentReport::new("fig2_recovery", "tau_ns", taus.to_vec(), cfg);
    let settle = settle_time_ns(cfg);
    let settled: Vec<usize> = (0..taus.len()).filter(|&i| taus[i] >= settle).collect();
    let fit_points: Vec<usize> = if settled.len() > FitModel::ExpRecovery.n_params() {
        settled
    } else {
        (0..taus.len()).collect()
    };
    let fit_taus: Vec<f64> = fit_points.iter().map(|&i| taus[i]).collect();
    if fit_points.len() < taus.len() && taus.len() > FitModel::ExpRecovery.n_params() {
        report.summary.insert("fit_min_tau_ns".into(), fit_taus[0]);
    }
    let mut columns = vec!["tau_ns".to_string()];
    let mut lifetimes = Vec::new();
    for (l, &k) in k_e_levels.iter().enumerate() {
        let label = rate_label(k);
        let series = ratios[l * taus.len()..(l + 1) * taus.len()].to_vec();
        columns.push(format!("overshoot_ratio_k{label}"));
        report.summary.insert(format!("k_e[{label}]"), k);
        if taus.len() > FitModel::ExpRecovery.n_params() {
            let y: Vec<f64> = fit_points.iter().map(|&i| series[i]).collect();
            let f = fit(FitModel::ExpRecovery, &fit_taus, &y, &FitOptions::default())?;
            let t = f.value("T").expect("exp_recovery has T");
            if f.converged {
                lifetimes.push(t);
            } else {
                report.notes.push(format!("exp_recovery fit at k_e = {label} did not converge"));
            }
            report.summary.insert(format!("T_IS_ns[{label}]"), t);
            // share of the rise completed by τ = 6·T on the fitted curve
            let (start, plateau) = (f.predict(0.0), f.value("y0").expect("y0"));
            report
                .summary
                .insert(format!("plateau_fraction_6T[{label}]"), (f.predict(6.0 * t) - start) / (plateau - start));
            report.fits.insert(format!("exp_recovery[{label}]"), f);
        }
        report.add_metric(format!("overshoot_ratio[{label}]"), series);
    }
    if taus.len() <= FitModel::ExpRecovery.n_params() {
        report.notes.push("too few dark periods for an exp_recovery fit; metrics only".into());
    }
    if !lifetimes.is_empty() {
        report
            .summary
            .insert("T_IS_mean_ns".into(), lifetimes.iter().sum::<f64>() / lifetimes.len() as f64);
    }

    let mut table = DataTable::new("fig2c_overshoot_vs_tau.csv", columns);
    for (i, &tau) in taus.iter().enumerate() {
        let mut row = vec![tau];
        row.extend((0..k_e_levels.len()).map(|l| ratios[l * taus.len() + i]));
        table.rows.push(row);
    }
    Ok(ExperimentOutput {
        report,
        tables: vec![table],
    })
}
