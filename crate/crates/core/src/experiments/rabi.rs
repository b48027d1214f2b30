//! Rabi oscillations with a dark buffer between initialization and the
//! microwave pulse. Letting the shelved population drain first raises the
//! polarization the pulse acts on, and with it the oscillation amplitude.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::detector::integrate_window;
use crate::fitting::{fit, FitModel, FitOptions};

use super::{
    check_positive, compile_protocol, invalid, linear_grid, load_protocol, log_grid, DataTable, ExperimentError,
    ExperimentOutput, ExperimentReport, MwDrive, Simulator, Span,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiParams {
    pub buffers_ns: Vec<f64>,
    pub mw_durations_ns: Vec<f64>,
}

impl Default for RabiParams {
    /// Buffers 5..150 ns, sixteen per decade; pulses 2..150 ns in 2 ns steps.
    fn default() -> Self {
        Self {
            buffers_ns: log_grid(5.0, 150.0, 16),
            mw_durations_ns: linear_grid(2.0, 150.0, 2.0),
        }
    }
}

/// Read-out counts in the integration window and in an equally long window of
/// the steady-state part of the pulse.
pub(crate) struct Readout {
    pub window: f64,
    pub steady: f64,
}

/// Simulated read-out for one point of the Rabi protocol.
pub(crate) struct RabiProbe<'a> {
    pub sim: Simulator<'a>,
    pub cfg: &'a RunConfig,
    pub window: (f64, f64),
}

impl RabiProbe<'_> {
    /// Only the two windows are sampled; the stretch in between is propagated
    /// exactly.
    pub fn measure(
        &self,
        spec: &crate::pulseseq::SequenceSpec,
        bindings: &[(&str, f64)],
        drive: MwDrive,
        point: usize,
    ) -> Result<Readout, ExperimentError> {
        let tl = compile_protocol(spec, bindings)?;
        let len = self.sim.readout_length(&tl)?;
        let (a, b) = self.window;
        let steady = self.cfg.steady_window_ns.0;
        let (sa, sb) = (steady, steady + (b - a));
        if b.max(sb) > len {
            return Err(invalid("readout window", format!("needs {} ns of read-out, pulse is {len} ns", b.max(sb))));
        }
        let k = self.cfg.preset.laser.k_exp;
        let dt = self.cfg.bin_width_ns;
        let (w, r) = if b <= sa {
            let traj = self.sim.run(&tl, k, drive, &[Span::new(a, b, dt), Span::new(sa, sb, dt)])?;
            (self.sim.histogram(&traj[0], 2 * point)?, self.sim.histogram(&traj[1], 2 * point + 1)?)
        } else {
            let lo = a.min(sa);
            let traj = self.sim.run(&tl, k, drive, &[Span::new(lo, b.max(sb), dt)])?;
            let h = self.sim.histogram(&traj[0], 2 * point)?;
            (h.clone(), h)
        };
        Ok(Readout {
            window: integrate_window(&w, a, b)?,
            steady: integrate_window(&r, sa, sb)?,
        })
    }

    /// `(S − R_window) / R_steady`: the signal against the no-microwave
    /// reference, normalized by the reference's steady-state level.
    ///
    /// The reference is a zero-transfer pulse rather than no pulse at all, so
    /// both branches see the same time axis when microwave intervals collapse.
    pub fn contrast(
        &self,
        spec: &crate::pulseseq::SequenceSpec,
        bindings: &[(&str, f64)],
        drive: MwDrive,
        point: usize,
    ) -> Result<f64, ExperimentError> {
        let s = self.measure(spec, bindings, drive, 2 * point)?;
        let r = self.measure(spec, bindings, MwDrive::Fixed(0.0), 2 * point + 1)?;
        if !(r.steady > 0.0) {
            return Err(crate::detector::DetectorError::ZeroReference.into());
        }
        Ok((s.window - r.window) / r.steady)
    }
}

pub fn rabi_buffer_scan(
    cfg: &RunConfig,
    buffers: &[f64],
    mw_durations: &[f64],
    window: (f64, f64),
) -> Result<ExperimentOutput, ExperimentError> {
    check_positive("buffers", buffers)?;
    check_positive("mw_durations", mw_durations)?;
    if !(window.0 >= 0.0 && window.1 > window.0) {
        return Err(invalid("readout window", format!("{window:?}")));
    }
    let spec = load_protocol("fig4a_rabi")?;
    let probe = RabiProbe {
        sim: Simulator::new(cfg),
        cfg,
        window,
    };
    // per buffer: the p = ½ baseline followed by the microwave sweep
    let per_buffer = mw_durations.len() + 1;
    let points: Vec<(usize, Option<usize>)> = (0..buffers.len())
        .flat_map(|b| std::iter::once((b, None)).chain((0..mw_durations.len()).map(move |i| (b, Some(i)))))
        .collect();
    let values = points
        .par_iter()
        .enumerate()
        .map(|(n, &(b, i))| {
            let tau = i.map_or(mw_durations[0], |i| mw_durations[i]);
            let drive = if i.is_some() { MwDrive::Rabi } else { MwDrive::Fixed(0.5) };
            probe.contrast(&spec, &[("buffer", buffers[b]), ("tau", tau)], drive, n)
        })
        .collect::<Result<Vec<f64>, ExperimentError>>()?;

    let mut report = ExperimentReport::new("fig4a_rabi", "buffer_ns", buffers.to_vec(), cfg);
    let mut amps = Vec::with_capacity(buffers.len());
    let mut amp_errs = Vec::with_capacity(buffers.len());
    let mut baselines = Vec::with_capacity(buffers.len());
    let mut curves = DataTable::new(
        "fig4a_rabi_curves.csv",
        std::iter::once("tau_mw_ns".to_string())
            .chain(buffers.iter().map(|b| format!("contrast_buffer{b}ns")))
            .collect(),
    );
    let mut centered: Vec<Vec<f64>> = Vec::new();
    for (b, &buffer) in buffers.iter().enumerate() {
        let chunk = &values[b * per_buffer..(b + 1) * per_buffer];
        let baseline = chunk[0];
        let y: Vec<f64> = chunk[1..].iter().map(|c| c - baseline).collect();
        baselines.push(baseline);
        if mw_durations.len() > FitModel::DampedSin.n_params() {
            let opts = FitOptions {
                multistart: true,
                ..FitOptions::default()
            };
            let f = fit(FitModel::DampedSin, mw_durations, &y, &opts)?;
            if !f.converged {
                report.notes.push(format!("damped_sin fit at buffer {buffer} ns did not converge"));
            }
            amps.push(f.value("A").expect("A"));
            amp_errs.push(f.error("A").expect("A"));
            report.fits.insert(format!("damped_sin[buffer={buffer}]"), f);
        } else {
            amps.push(y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            amp_errs.push(f64::NAN);
        }
        centered.push(chunk[1..].to_vec());
    }
    for (i, &tau) in mw_durations.iter().enumerate() {
        let mut row = vec![tau];
        row.extend(centered.iter().map(|c| c[i]));
        curves.rows.push(row);
    }
    if mw_durations.len() <= FitModel::DampedSin.n_params() {
        report.notes.push("too few pulse lengths for a damped_sin fit; amplitude is max |contrast − baseline|".into());
    }
    report.add_metric("amplitude", amps.clone());
    report.add_metric("amplitude_err", amp_errs.clone());
    report.add_metric("baseline", baselines.clone());

    let first = amps[0];
    let last = amps[amps.len() - 1];
    report.summary.insert("amplitude_ratio_last_first".into(), last / first);
    if buffers.len() > FitModel::ExpRecovery.n_params() {
        let f = fit(FitModel::ExpRecovery, buffers, &amps, &FitOptions::default())?;
        let plateau = f.value("y0").expect("y0");
        report.summary.insert("T_buffer_ns".into(), f.value("T").expect("T"));
        report.summary.insert("amplitude_asymptote".into(), plateau);
        let worst = buffers
            .iter()
            .zip(&amps)
            .filter(|(b, _)| **b >= 150.0)
            .map(|(_, a)| a / plateau)
            .fold(f64::INFINITY, f64::min);
        if worst.is_finite() {
            report.summary.insert("min_fraction_of_asymptote_buffer_ge_150".into(), worst);
        }
        if !f.converged {
            report.notes.push("exp_recovery fit of amplitude vs buffer did not converge".into());
        }
        report.fits.insert("amplitude_vs_buffer".into(), f);
    }

    let mut table = DataTable::new(
        "fig4b_amp_vs_buffer.csv",
        vec!["buffer_ns".into(), "amplitude".into(), "amplitude_err".into(), "baseline".into()],
    );
    for (i, &b) in buffers.iter().enumerate() {
        table.rows.push(vec![b, amps[i], amp_errs[i], baselines[i]]);
    }
    Ok(ExperimentOutput {
        report,
        tables: vec![table, curves],
    })
}
