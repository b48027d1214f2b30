//! Shipped pulse sequences and the timeline simulator shared by all protocols.

use crate::config::RunConfig;
use crate::detector::{derive_seed, expected_counts, sample_counts, TcspcHistogram};
use crate::kinetics::{
    mw_mix, propagate_profile, propagate_profile_final, rabi_mixing_fraction, KineticsConfig, LaserProfile,
    Trajectory,
};
use crate::model::{thermal_populations, Populations, RateParams};
use crate::pulseseq::{compile_with_resolution, parse, Bindings, SequenceSpec, Timeline};

use super::ExperimentError;

/// Edge grid used when compiling protocols for simulation. Much finer than the
/// default so that non-integer sweep values are not snapped.
pub const PROTOCOL_RESOLUTION_NS: f64 = 1e-3;

pub const PROTOCOLS: [(&str, &str); 6] = [
    ("fig1c_odmr", include_str!("../../../../protocols/fig1c_odmr.pseq")),
    ("fig2_recovery", include_str!("../../../../protocols/fig2_recovery.pseq")),
    ("fig3_init", include_str!("../../../../protocols/fig3_init.pseq")),
    ("fig4a_rabi", include_str!("../../../../protocols/fig4a_rabi.pseq")),
    ("fig4c_t1", include_str!("../../../../protocols/fig4c_t1.pseq")),
    ("composite_train", include_str!("../../../../protocols/composite_train.pseq")),
];

pub fn protocol_source(name: &str) -> Option<&'static str> {
    PROTOCOLS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_protocol(name: &str) -> Result<SequenceSpec, ExperimentError> {
    let src = protocol_source(name).ok_or_else(|| ExperimentError::UnknownProtocol(name.to_string()))?;
    Ok(parse(src)?)
}

pub fn compile_protocol(spec: &SequenceSpec, bindings: &[(&str, f64)]) -> Result<Timeline, ExperimentError> {
    let b: Bindings = bindings.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    Ok(compile_with_resolution(spec, &b, PROTOCOL_RESOLUTION_NS)?)
}

/// How microwave on-intervals act on the ground-state populations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MwDrive {
    /// Microwave channel ignored.
    Off,
    /// Damped Rabi transfer for the pulse length.
    Rabi,
    /// Fixed transfer fraction for every pulse.
    Fixed(f64),
}

/// Sampled stretch of the run, relative to the start of the read-out pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub start: f64,
    pub end: f64,
    pub dt: f64,
}

impl Span {
    pub fn new(start: f64, end: f64, dt: f64) -> Self {
        Self { start, end, dt }
    }
}

/// Runs compiled timelines against one parameter set.
pub struct Simulator<'a> {
    cfg: &'a RunConfig,
}

enum Stop {
    Mw(f64),
    Record(usize),
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a RunConfig) -> Self {
        Self { cfg }
    }

    fn params(&self) -> &RateParams {
        &self.cfg.preset.system.rates
    }

    fn kinetics(&self) -> &KineticsConfig {
        &self.cfg.kinetics
    }

    /// Length of the last laser on-interval (the read-out pulse).
    pub fn readout_length(&self, tl: &Timeline) -> Result<f64, ExperimentError> {
        let laser = tl.on_intervals("laser").map_err(|_| ExperimentError::MissingChannel("laser"))?;
        let (a, b) = laser.last().copied().ok_or(ExperimentError::MissingChannel("laser"))?;
        Ok(b - a)
    }

    /// Simulate `tl` from thermal equilibrium with plateau pump rate `k_e` and
    /// return one trajectory per span, times relative to the read-out on-edge.
    ///
    /// Unless microwave pulses advance time, their intervals are cut out of the
    /// time axis and replaced by an instantaneous population exchange.
    pub fn run(&self, tl: &Timeline, k_e: f64, drive: MwDrive, spans: &[Span]) -> Result<Vec<Trajectory>, ExperimentError> {
        let laser = tl.on_intervals("laser").map_err(|_| ExperimentError::MissingChannel("laser"))?;
        let mw = match (drive, tl.on_intervals("mw")) {
            (MwDrive::Off, _) => Vec::new(),
            (_, Ok(iv)) => iv,
            (_, Err(_)) => return Err(ExperimentError::MissingChannel("mw")),
        };
        for &(la, lb) in &laser {
            for &(ma, mb) in &mw {
                if la < mb && ma < lb {
                    return Err(ExperimentError::LaserDuringMw { t_ns: la.max(ma) });
                }
            }
        }
        let collapse = !self.kinetics().mw_advances_time;
        let map = |t: f64| -> f64 {
            if !collapse {
                return t;
            }
            let removed: f64 = mw.iter().map(|&(a, b)| (t.min(b) - a).max(0.0)).sum();
            t - removed
        };

        let mut edges: Vec<(f64, bool)> = Vec::with_capacity(2 * laser.len());
        for &(a, b) in &laser {
            let (a, b) = (map(a), map(b));
            // a dark gap that collapsed to nothing joins the two pulses
            if edges.last().is_some_and(|&(t, on)| !on && t >= a) {
                edges.pop();
            } else {
                edges.push((a, true));
            }
            edges.push((b, false));
        }
        let (ra, _) = laser.last().copied().ok_or(ExperimentError::MissingChannel("laser"))?;
        let anchor = map(ra);
        let laser_cfg = &self.cfg.preset.laser;
        let profile = LaserProfile::new(k_e, laser_cfg.t_rise_ns, laser_cfg.t_fall_ns, edges)?;

        let mut stops: Vec<(f64, u8, Stop)> = Vec::new();
        for &(a, b) in &mw {
            let p = match drive {
                MwDrive::Off => continue,
                MwDrive::Fixed(p) => p,
                MwDrive::Rabi => {
                    let m = &self.cfg.preset.mw;
                    rabi_mixing_fraction(b - a, m.rabi_period_ns, m.t2rho_ns)?
                }
            };
            let at = if collapse { map(a) } else { b };
            stops.push((at, 0, Stop::Mw(p)));
        }
        for (i, s) in spans.iter().enumerate() {
            if !(s.end > s.start) || !(s.dt > 0.0) {
                return Err(super::invalid("record span", format!("{s:?}")));
            }
            stops.push((anchor + s.start, 1, Stop::Record(i)));
        }
        stops.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for w in spans.windows(2) {
            if w[1].start < w[0].end - 1e-12 {
                return Err(super::invalid("record span", "spans must be ordered and disjoint"));
            }
        }
        for (t, kind, _) in &stops {
            if *kind == 0 && spans.iter().any(|s| *t > anchor + s.start && *t < anchor + s.end) {
                return Err(super::invalid("record span", "microwave pulse inside a recorded span"));
            }
        }

        let params = self.params();
        let kcfg = self.kinetics();
        let mut state: Populations = thermal_populations(self.cfg.preset.system.thermal_ratio)?;
        let mut t = 0.0;
        let mut out: Vec<Option<Trajectory>> = vec![None; spans.len()];
        for (at, _, stop) in stops {
            if at < t - 1e-9 {
                return Err(super::invalid("record span", "span overlaps an earlier event"));
            }
            if at > t {
                state = propagate_profile_final(&state, params, &profile, t, at, kcfg)?;
                t = at;
            }
            match stop {
                Stop::Mw(p) => state = mw_mix(&state, p)?,
                Stop::Record(i) => {
                    let s = spans[i];
                    let mut traj = propagate_profile(&state, params, &profile, t, anchor + s.end, s.dt, kcfg)?;
                    state = *traj.last().expect("non-empty trajectory");
                    t = anchor + s.end;
                    for x in traj.times.iter_mut() {
                        *x -= anchor;
                    }
                    out[i] = Some(traj);
                }
            }
        }
        Ok(out.into_iter().map(|t| t.expect("every span recorded")).collect())
    }

    /// Histogram of a read-out trajectory, with shot noise when enabled.
    pub fn histogram(&self, traj: &Trajectory, point: usize) -> Result<TcspcHistogram, ExperimentError> {
        let h = expected_counts(traj, self.cfg.bin_width_ns, self.cfg.shots, self.cfg.efficiency)?;
        if self.cfg.noise {
            Ok(sample_counts(&h, derive_seed(self.cfg.seed, point))?)
        } else {
            Ok(h)
        }
    }
}
