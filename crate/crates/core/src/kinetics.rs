//! Time propagation of the five-level populations.
//!
//! Constant-excitation segments are propagated exactly with a matrix exponential;
//! laser flanks (exponential ramps) are integrated with classical RK4. Microwave
//! pulses act as instantaneous population maps on the ground-state manifolds.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{Matrix5, Vector5};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{rate_matrix, ModelError, Populations, RateParams};

/// Condition number of the eigenvector matrix above which the propagator falls
/// back to Padé scaling-and-squaring.
pub const EIGEN_CONDITION_LIMIT: f64 = 1e12;

/// Components below this are a hard error; between it and `-CLAMP_TOL` they are
/// clamped to zero and counted.
pub const NEGATIVE_HARD_LIMIT: f64 = -1e-9;
pub const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid kinetics parameter `{name}` = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("population {level} went to {value:e} at t = {t_ns} ns")]
    NegativePopulation { level: usize, value: f64, t_ns: f64 },
}

fn perr(name: &'static str, value: f64, reason: &'static str) -> KineticsError {
    KineticsError::Parameter {
        name,
        value,
        reason,
    }
}

/// Numerical knobs for trajectory integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticsConfig {
    /// Largest RK4 step on laser flanks, ns.
    pub dt_max_ns: f64,
    /// Relative deviation from the ramp asymptote below which `k_e` counts as constant.
    pub const_tolerance: f64,
    /// Integrate everything with RK4, never with the exact propagator.
    pub force_rk4: bool,
    /// Let the ground state evolve under the dark generator for the MW pulse length.
    pub mw_advances_time: bool,
    /// Scale factor from emitted photons to collected photons.
    pub collection_efficiency: f64,
}

impl Default for KineticsConfig {
    fn default() -> Self {
        Self {
            dt_max_ns: 0.05,
            const_tolerance: 1e-6,
            force_rk4: false,
            mw_advances_time: false,
            collection_efficiency: 1.0,
        }
    }
}

impl KineticsConfig {
    pub fn validate(&self) -> Result<(), KineticsError> {
        if !(self.dt_max_ns > 0.0) || !self.dt_max_ns.is_finite() {
            return Err(perr("dt_max_ns", self.dt_max_ns, "step size must be > 0"));
        }
        if !(self.const_tolerance > 0.0) {
            return Err(perr("const_tolerance", self.const_tolerance, "must be > 0"));
        }
        if !(self.collection_efficiency >= 0.0) {
            return Err(perr(
                "collection_efficiency",
                self.collection_efficiency,
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Method {
    Eigen {
        values: [Complex64; 5],
        vectors: Matrix5<Complex64>,
        inverse: Matrix5<Complex64>,
    },
    Pade,
}

/// Which route a [`Propagator`] uses for `exp(M·t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpRoute {
    Eigen,
    Pade,
}

/// Exact propagator for a constant generator.
#[derive(Debug, Clone)]
pub struct Propagator {
    generator: Matrix5<f64>,
    method: Method,
}

fn eigenvector(m: &Matrix5<Complex64>, lambda: Complex64) -> Option<Vector5<Complex64>> {
    let shifted = m - Matrix5::<Complex64>::identity() * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let v: Vector5<Complex64> = v_t.row(imin).adjoint();
    Some(v)
}

fn condition_number(v: &Matrix5<Complex64>) -> f64 {
    let sv = v.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

impl Propagator {
    pub fn new(params: &RateParams, k_e: f64) -> Result<Self, KineticsError> {
        Ok(Self::from_generator(rate_matrix(params, k_e)?))
    }

    pub fn from_generator(generator: Matrix5<f64>) -> Self {
        let method = Self::decompose(&generator).unwrap_or(Method::Pade);
        Self { generator, method }
    }

    /// Force the Padé route regardless of the spectrum.
    pub fn pade(generator: Matrix5<f64>) -> Self {
        Self {
            generator,
            method: Method::Pade,
        }
    }

    fn decompose(m: &Matrix5<f64>) -> Option<Method> {
        let eig = m.complex_eigenvalues();
        let mc: Matrix5<Complex64> = m.map(|x| Complex64::new(x, 0.0));
        let mut vectors = Matrix5::<Complex64>::zeros();
        let mut values = [Complex64::new(0.0, 0.0); 5];
        for (i, lambda) in eig.iter().enumerate() {
            if !lambda.re.is_finite() || !lambda.im.is_finite() {
                return None;
            }
            let v = eigenvector(&mc, *lambda)?;
            vectors.set_column(i, &v);
            values[i] = *lambda;
        }
        if condition_number(&vectors) > EIGEN_CONDITION_LIMIT {
            return None;
        }
        let inverse = vectors.try_inverse()?;
        Some(Method::Eigen {
            values,
            vectors,
            inverse,
        })
    }

    pub fn route(&self) -> ExpRoute {
        match self.method {
            Method::Eigen { .. } => ExpRoute::Eigen,
            Method::Pade => ExpRoute::Pade,
        }
    }

    pub fn generator(&self) -> &Matrix5<f64> {
        &self.generator
    }

    /// Transition matrix `exp(M·dt)` for a step of `dt_ns`.
    pub fn transition(&self, dt_ns: f64) -> Matrix5<f64> {
        if dt_ns == 0.0 {
            return Matrix5::identity();
        }
        match &self.method {
            Method::Eigen {
                values,
                vectors,
                inverse,
            } => {
                let mut scaled = *vectors;
                for (j, lambda) in values.iter().enumerate() {
                    let f = (lambda * dt_ns).exp();
                    for r in 0..5 {
                        scaled[(r, j)] *= f;
                    }
                }
                (scaled * inverse).map(|z| z.re)
            }
            Method::Pade => (self.generator * dt_ns).exp(),
        }
    }

    pub fn apply(&self, pops: &Populations, dt_ns: f64) -> Populations {
        Populations::from_vector(&(self.transition(dt_ns) * pops.to_vector()))
    }
}

/// Exact propagation over `dt_ns` at constant excitation `k_e` (s⁻¹).
pub fn propagate_const(
    pops: &Populations,
    params: &RateParams,
    k_e: f64,
    dt_ns: f64,
) -> Result<Populations, KineticsError> {
    if !(dt_ns >= 0.0) || !dt_ns.is_finite() {
        return Err(perr("dt_ns", dt_ns, "must be >= 0"));
    }
    if dt_ns == 0.0 {
        params.validate()?;
        return Ok(*pops);
    }
    Ok(Propagator::new(params, k_e)?.apply(pops, dt_ns))
}

/// Laser excitation rate against time, with exponential flanks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserProfile {
    /// Plateau excitation rate, s⁻¹.
    pub k_max: f64,
    /// Rise time constant, ns.
    pub t_rise: f64,
    /// Fall time constant, ns.
    pub t_fall: f64,
    edges: Vec<(f64, bool)>,
    /// Excitation rate just before each edge.
    #[serde(skip)]
    start_values: Vec<f64>,
}

impl LaserProfile {
    pub fn new(
        k_max: f64,
        t_rise: f64,
        t_fall: f64,
        edges: Vec<(f64, bool)>,
    ) -> Result<Self, KineticsError> {
        if !(k_max >= 0.0) || !k_max.is_finite() {
            return Err(perr("k_max", k_max, "must be finite and >= 0"));
        }
        if !(t_rise >= 0.0) || !t_rise.is_finite() {
            return Err(perr("t_rise", t_rise, "must be >= 0"));
        }
        if !(t_fall >= 0.0) || !t_fall.is_finite() {
            return Err(perr("t_fall", t_fall, "must be >= 0"));
        }
        for w in edges.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(perr("edge time", w[1].0, "edge times must be strictly increasing"));
            }
        }
        let mut p = Self {
            k_max,
            t_rise,
            t_fall,
            edges,
            start_values: Vec::new(),
        };
        let mut values = Vec::with_capacity(p.edges.len());
        for i in 0..p.edges.len() {
            let v = if i == 0 {
                0.0
            } else {
                p.value_after(i - 1, values[i - 1], p.edges[i].0 - p.edges[i - 1].0)
            };
            values.push(v);
        }
        p.start_values = values;
        Ok(p)
    }

    /// Always-on laser (on-edge at `t = -∞` effectively reached).
    pub fn constant(k_e: f64) -> Result<Self, KineticsError> {
        Self::new(k_e, 0.0, 0.0, vec![(f64::MIN, true)])
    }

    pub fn edges(&self) -> &[(f64, bool)] {
        &self.edges
    }

    fn value_after(&self, edge: usize, start: f64, dt: f64) -> f64 {
        let (_, on) = self.edges[edge];
        if on {
            if self.t_rise == 0.0 {
                self.k_max
            } else {
                self.k_max - (self.k_max - start) * (-dt / self.t_rise).exp()
            }
        } else if self.t_fall == 0.0 {
            0.0
        } else {
            start * (-dt / self.t_fall).exp()
        }
    }

    /// Index of the last edge at or before `t`.
    fn edge_index(&self, t: f64) -> Option<usize> {
        let n = self.edges.partition_point(|&(te, _)| te <= t);
        n.checked_sub(1)
    }

    /// Excitation rate (s⁻¹) at time `t_ns`.
    pub fn k_e_at(&self, t_ns: f64) -> f64 {
        match self.edge_index(t_ns) {
            None => 0.0,
            Some(i) => self.value_after(i, self.start_values[i], t_ns - self.edges[i].0),
        }
    }

    /// Plateau the rate is relaxing toward at `t_ns`.
    fn asymptote(&self, t_ns: f64) -> f64 {
        match self.edge_index(t_ns) {
            Some(i) if self.edges[i].1 => self.k_max,
            _ => 0.0,
        }
    }

    /// Time after which the flank following the edge active at `t_ns` stays
    /// within `tol · k_max` of its plateau.
    fn settle_time(&self, t_ns: f64, tol: f64) -> f64 {
        let Some(i) = self.edge_index(t_ns) else {
            return f64::NEG_INFINITY;
        };
        let (te, on) = self.edges[i];
        let tau = if on { self.t_rise } else { self.t_fall };
        let gap = (self.start_values[i] - if on { self.k_max } else { 0.0 }).abs();
        let limit = tol * self.k_max;
        if tau == 0.0 || gap <= limit || self.k_max == 0.0 {
            return te;
        }
        te + tau * (gap / limit).ln()
    }

    /// Edge times strictly inside `(a, b)`.
    fn edges_between(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.edges
            .iter()
            .map(|&(t, _)| t)
            .filter(move |&t| t > a && t < b)
    }
}

/// Time-sampled populations and photoluminescence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub populations: Vec<Populations>,
    /// Collected photon rate per emitter, photons per ns.
    pub pl: Vec<f64>,
    /// Number of components clamped from small negative values to zero.
    pub clamped: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&Populations> {
        self.populations.last()
    }

    /// Smallest spacing between consecutive samples.
    pub fn min_step(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_ns,n_gs0,n_gs1,n_es0,n_es1,n_is,pl")?;
        for ((t, p), pl) in self.times.iter().zip(&self.populations).zip(&self.pl) {
            writeln!(
                w,
                "{t},{},{},{},{},{},{pl}",
                p.n_gs0, p.n_gs1, p.n_es0, p.n_es1, p.n_is
            )?;
        }
        Ok(())
    }

    /// Append `other`, skipping its first sample when it repeats our last time.
    pub fn extend(&mut self, other: Trajectory) {
        let skip = match (self.times.last(), other.times.first()) {
            (Some(a), Some(b)) if (a - b).abs() < 1e-9 => 1,
            _ => 0,
        };
        self.times.extend(other.times.into_iter().skip(skip));
        self.populations
            .extend(other.populations.into_iter().skip(skip));
        self.pl.extend(other.pl.into_iter().skip(skip));
        self.clamped += other.clamped;
    }
}

/// Emitted photon rate per emitter (photons/ns) for the given populations.
pub fn pl_rate(params: &RateParams, pops: &Populations, collection_efficiency: f64) -> f64 {
    params.k_r * 1e-9 * pops.excited() * collection_efficiency
}

/// Working state for one integration run; caches propagators per excitation
/// level and transition matrices per step length.
struct Integrator<'a> {
    params: &'a RateParams,
    profile: &'a LaserProfile,
    cfg: &'a KineticsConfig,
    dark: Matrix5<f64>,
    pump: Matrix5<f64>,
    rk4_step: f64,
    propagators: HashMap<u64, Propagator>,
    transitions: HashMap<(u64, u64), Matrix5<f64>>,
}

impl<'a> Integrator<'a> {
    fn new(
        params: &'a RateParams,
        profile: &'a LaserProfile,
        cfg: &'a KineticsConfig,
        dt_sample: f64,
    ) -> Result<Self, KineticsError> {
        let dark = rate_matrix(params, 0.0)?;
        let pump = rate_matrix(params, 1e9)? - dark;
        let worst = rate_matrix(params, profile.k_max)?;
        let stiff = (0..5).map(|i| worst[(i, i)].abs()).fold(0.0, f64::max);
        let mut rk4_step = cfg.dt_max_ns.min(dt_sample);
        if stiff > 0.0 {
            // keeps h·|λ| <= 2, inside the RK4 stability region
            rk4_step = rk4_step.min(1.0 / stiff);
        }
        Ok(Self {
            params,
            profile,
            cfg,
            dark,
            pump,
            rk4_step,
            propagators: HashMap::new(),
            transitions: HashMap::new(),
        })
    }

    fn generator_at(&self, t: f64) -> Matrix5<f64> {
        self.dark + self.pump * (self.profile.k_e_at(t) * 1e-9)
    }

    fn exact(&mut self, x: Vector5<f64>, k_e: f64, dt: f64) -> Result<Vector5<f64>, KineticsError> {
        let key = (k_e.to_bits(), dt.to_bits());
        if let Some(t) = self.transitions.get(&key) {
            return Ok(t * x);
        }
        let prop = match self.propagators.get(&k_e.to_bits()) {
            Some(p) => p.clone(),
            None => {
                let p = Propagator::new(self.params, k_e)?;
                self.propagators.insert(k_e.to_bits(), p.clone());
                p
            }
        };
        let t = prop.transition(dt);
        if self.transitions.len() < 4096 {
            self.transitions.insert(key, t);
        }
        Ok(t * x)
    }

    fn rk4(&self, mut x: Vector5<f64>, a: f64, b: f64) -> Vector5<f64> {
        let n = ((b - a) / self.rk4_step).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for i in 0..n {
            let t = a + i as f64 * h;
            let m0 = self.generator_at(t);
            let mh = self.generator_at(t + 0.5 * h);
            let m1 = self.generator_at(t + h);
            let k1 = m0 * x;
            let k2 = mh * (x + k1 * (0.5 * h));
            let k3 = mh * (x + k2 * (0.5 * h));
            let k4 = m1 * (x + k3 * h);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        x
    }

    /// Advance from `a` to `b`, splitting at edges and at flank settling points.
    fn advance(&mut self, mut x: Vector5<f64>, a: f64, b: f64) -> Result<Vector5<f64>, KineticsError> {
        let mut cuts: Vec<f64> = self.profile.edges_between(a, b).collect();
        if !self.cfg.force_rk4 {
            let mut extra = Vec::new();
            for &t in std::iter::once(&a).chain(cuts.iter()) {
                let s = self.profile.settle_time(t, self.cfg.const_tolerance);
                if s > a && s < b {
                    extra.push(s);
                }
            }
            cuts.extend(extra);
        }
        cuts.push(b);
        cuts.sort_by(|p, q| p.total_cmp(q));
        cuts.dedup();
        let mut t = a;
        for &c in &cuts {
            if c <= t {
                continue;
            }
            let settled = !self.cfg.force_rk4
                && self.profile.settle_time(t, self.cfg.const_tolerance) <= t;
            x = if settled {
                let k = self.profile.asymptote(t);
                self.exact(x, k, c - t)?
            } else {
                self.rk4(x, t, c)
            };
            t = c;
        }
        Ok(x)
    }
}

fn sanitize(x: &mut Vector5<f64>, t: f64, clamped: &mut usize) -> Result<(), KineticsError> {
    for (level, v) in x.iter_mut().enumerate() {
        if *v < NEGATIVE_HARD_LIMIT {
            return Err(KineticsError::NegativePopulation {
                level,
                value: *v,
                t_ns: t,
            });
        }
        if *v < -CLAMP_TOL {
            *v = 0.0;
            *clamped += 1;
        }
    }
    Ok(())
}

/// Sample grid `t0, t0+dt, …` up to and including `t1`.
pub fn sample_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * dt).collect();
    if t1 - out[n] > 1e-9 * dt.max(1.0) {
        out.push(t1);
    }
    out
}

/// Integrate under a laser profile from `t0` to `t1`, sampling every `dt_sample`.
pub fn propagate_profile(
    pops: &Populations,
    params: &RateParams,
    profile: &LaserProfile,
    t0: f64,
    t1: f64,
    dt_sample: f64,
    cfg: &KineticsConfig,
) -> Result<Trajectory, KineticsError> {
    cfg.validate()?;
    if !(t1 > t0) {
        return Err(perr("t1", t1, "must exceed t0"));
    }
    if !(dt_sample > 0.0) || !dt_sample.is_finite() {
        return Err(perr("dt_sample", dt_sample, "must be > 0"));
    }
    let mut integ = Integrator::new(params, profile, cfg, dt_sample)?;
    let grid = sample_grid(t0, t1, dt_sample);
    let mut traj = Trajectory {
        times: Vec::with_capacity(grid.len()),
        populations: Vec::with_capacity(grid.len()),
        pl: Vec::with_capacity(grid.len()),
        clamped: 0,
    };
    let mut x = pops.to_vector();
    let mut prev = t0;
    for &t in &grid {
        if t > prev {
            x = integ.advance(x, prev, t)?;
            sanitize(&mut x, t, &mut traj.clamped)?;
        }
        prev = t;
        let p = Populations::from_vector(&x);
        traj.times.push(t);
        traj.pl.push(pl_rate(params, &p, cfg.collection_efficiency));
        traj.populations.push(p);
    }
    if traj.clamped > 0 {
        log::warn!("{} population components clamped to zero", traj.clamped);
    }
    Ok(traj)
}

/// Final populations after integrating under `profile` from `t0` to `t1`,
/// without storing intermediate samples.
pub fn propagate_profile_final(
    pops: &Populations,
    params: &RateParams,
    profile: &LaserProfile,
    t0: f64,
    t1: f64,
    cfg: &KineticsConfig,
) -> Result<Populations, KineticsError> {
    cfg.validate()?;
    if t1 < t0 {
        return Err(perr("t1", t1, "must not precede t0"));
    }
    if t1 == t0 {
        return Ok(*pops);
    }
    let mut integ = Integrator::new(params, profile, cfg, t1 - t0)?;
    let mut x = integ.advance(pops.to_vector(), t0, t1)?;
    let mut clamped = 0;
    sanitize(&mut x, t1, &mut clamped)?;
    Ok(Populations::from_vector(&x))
}

/// Microwave population exchange between the ground-state manifolds.
pub fn mw_mix(pops: &Populations, p: f64) -> Result<Populations, KineticsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(perr("p", p, "mixing fraction must lie in [0, 1]"));
    }
    if p == 1.0 {
        return Ok(Populations {
            n_gs0: pops.n_gs1,
            n_gs1: pops.n_gs0,
            ..*pops
        });
    }
    Ok(Populations {
        n_gs0: (1.0 - p) * pops.n_gs0 + p * pops.n_gs1,
        n_gs1: p * pops.n_gs0 + (1.0 - p) * pops.n_gs1,
        ..*pops
    })
}

/// Transferred fraction after a resonant pulse of length `tau_mw`,
/// `½·(1 − e^{−τ/T2ρ}·cos(2πτ/T))`.
pub fn rabi_mixing_fraction(tau_mw: f64, rabi_period: f64, t2rho: f64) -> Result<f64, KineticsError> {
    if !(rabi_period > 0.0) {
        return Err(perr("rabi_period", rabi_period, "must be > 0"));
    }
    if !(t2rho > 0.0) {
        return Err(perr("t2rho", t2rho, "must be > 0"));
    }
    if !(tau_mw >= 0.0) {
        return Err(perr("tau_mw", tau_mw, "must be >= 0"));
    }
    let damp = (-tau_mw / t2rho).exp();
    let p = 0.5 * (1.0 - damp * (std::f64::consts::TAU * tau_mw / rabi_period).cos());
    Ok(p.clamp(0.0, 1.0))
}
