//! Initialization from thermal equilibrium: how long the laser has to stay on
//! before the m_s = 0 population settles, and how that scales with pump rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, T95Band};
use crate::fitting::{fit, FitModel, FitOptions};
use crate::kinetics::Trajectory;
use crate::model::{steady_state, RateParams};

use super::{
    check_positive, compile_protocol, invalid, load_protocol, log_grid, DataTable, ExperimentError,
    ExperimentOutput, ExperimentReport, MwDrive, Simulator, Span,
};

/// Upper end of the pump-rate range used for the power-law fit, s⁻¹.
pub const POWER_LAW_MAX_K: f64 = 1e11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitParams {
    /// Pump rates, s⁻¹.
    pub k_e_grid: Vec<f64>,
}

impl Default for InitParams {
    /// 1e6 to 1e13 s⁻¹, four points per decade.
    fn default() -> Self {
        Self {
            k_e_grid: log_grid(1e6, 1e13, 4),
        }
    }
}

/// Time after the trajectory start at which the m_s = 0 ground-state
/// population enters the 5 % band around its steady state for good.
///
/// The crossing is interpolated linearly between samples.
pub fn t95_time(traj: &Trajectory, params: &RateParams, k_e: f64, band: T95Band) -> Result<f64, ExperimentError> {
    if traj.is_empty() {
        return Err(invalid("trajectory", "empty"));
    }
    let target = steady_state(params, k_e)?.n_gs0;
    let dev: Vec<f64> = traj.populations.iter().map(|p| (p.n_gs0 - target).abs()).collect();
    let threshold = match band {
        T95Band::SteadyState => 0.05 * target,
        T95Band::InitialDeviation => 0.05 * dev[0],
    };
    let t0 = traj.times[0];
    let Some(j) = dev.iter().rposition(|&d| d > threshold) else {
        return Ok(0.0);
    };
    if j + 1 == dev.len() {
        let (i, closest) = dev
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, d)| (i, *d))
            .expect("non-empty");
        return Err(ExperimentError::NotReached {
            threshold,
            closest,
            t_ns: traj.times[i] - t0,
        });
    }
    let (ta, tb) = (traj.times[j], traj.times[j + 1]);
    let (da, db) = (dev[j], dev[j + 1]);
    let f = if da > db { (da - threshold) / (da - db) } else { 1.0 };
    Ok(ta + f * (tb - ta) - t0)
}

/// Read-out sampling for the 6 µs initialization pulse: fine near the onset,
/// coarser once the fast transients are over.
fn init_spans(len: f64) -> Vec<Span> {
    vec![
        Span::new(0.0, 20.0, 0.005),
        Span::new(20.0, 200.0, 0.05),
        Span::new(200.0, len, 1.0),
    ]
}

fn init_trajectory(sim: &Simulator, k_e: f64) -> Result<Trajectory, ExperimentError> {
    let spec = load_protocol("fig3_init")?;
    let tl = compile_protocol(&spec, &[])?;
    let len = sim.readout_length(&tl)?;
    let mut parts = sim.run(&tl, k_e, MwDrive::Off, &init_spans(len))?.into_iter();
    let mut traj = parts.next().expect("first span");
    for p in parts {
        traj.extend(p);
    }
    Ok(traj)
}

pub fn initialization_scan(cfg: &RunConfig, k_e_grid: &[f64]) -> Result<ExperimentOutput, ExperimentError> {
    check_positive("k_e_grid", k_e_grid)?;
    let (lo, hi) = k_e_grid
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &k| (a.min(k), b.max(k)));
    if hi / lo < 1e3 * (1.0 - 1e-9) {
        return Err(invalid(
            "k_e_grid",
            format!("must span at least 3 decades for a power-law fit, got {lo:e}..{hi:e}"),
        ));
    }
    let params = &cfg.preset.system.rates;
    let sim = Simulator::new(cfg);
    let k_exp = cfg.preset.laser.k_exp;

    let mut ks = k_e_grid.to_vec();
    ks.push(k_exp);
    let results = ks
        .par_iter()
        .map(|&k| {
            let traj = init_trajectory(&sim, k)?;
            let t95 = t95_time(&traj, params, k, cfg.t95_band)?;
            let ss = steady_state(params, k)?;
            Ok((t95, ss.n_is, ss.n_gs0, traj))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let (reference, grid) = results.split_last().expect("k_exp appended");

    let mut report = ExperimentReport::new("fig3_init", "k_e", k_e_grid.to_vec(), cfg);
    let t95: Vec<f64> = grid.iter().map(|r| r.0).collect();
    report.add_metric("t95_ns", t95.clone());
    report.add_metric("n_is_ss", grid.iter().map(|r| r.1).collect());
    report.add_metric("n_gs0_ss", grid.iter().map(|r| r.2).collect());
    report.summary.insert("k_exp".into(), k_exp);
    report.summary.insert("t95_at_k_exp_ns".into(), reference.0);

    let (xs, ys): (Vec<f64>, Vec<f64>) = k_e_grid
        .iter()
        .zip(&t95)
        .filter(|(k, _)| **k <= POWER_LAW_MAX_K)
        .map(|(k, t)| (*k, *t))
        .unzip();
    if xs.len() <= FitModel::PowerLaw.n_params() {
        return Err(invalid(
            "k_e_grid",
            format!("needs more than 3 points up to {POWER_LAW_MAX_K:e} s⁻¹ for the power-law fit"),
        ));
    }
    let f = fit(FitModel::PowerLaw, &xs, &ys, &FitOptions::default())?;
    if !f.converged {
        report.notes.push("power_law fit did not converge".into());
    }
    for name in ["a", "b", "t0"] {
        report.summary.insert(format!("power_law_{name}"), f.value(name).expect("power_law"));
    }
    report.fits.insert("power_law".into(), f);

    let mut table = DataTable::new(
        "fig3c_t95_vs_ke.csv",
        vec!["k_e".into(), "t95_ns".into(), "n_is_ss".into(), "n_gs0_ss".into()],
    );
    for (k, r) in k_e_grid.iter().zip(grid) {
        table.rows.push(vec![*k, r.0, r.1, r.2]);
    }
    let traj = &reference.3;
    let mut pops = DataTable::new(
        "fig3a_populations_k_exp.csv",
        ["t_ns", "n_gs0", "n_gs1", "n_es0", "n_es1", "n_is", "pl"].map(String::from).to_vec(),
    );
    for ((t, p), pl) in traj.times.iter().zip(&traj.populations).zip(&traj.pl) {
        // the laser turns on 1 ns into the sequence
        pops.rows.push(vec![t + 1.0, p.n_gs0, p.n_gs1, p.n_es0, p.n_es1, p.n_is, *pl]);
    }
    Ok(ExperimentOutput {
        report,
        tables: vec![table, pops],
    })
}
