//! The five-level rate model.
//!
//! Levels are ordered `GS(0), GS(±1), ES(0), ES(±1), IS`; the `±1` sub-manifolds of
//! ground and excited state are merged into single levels. Rates are stored in s⁻¹,
//! while the generator matrix is expressed in ns⁻¹ so that it pairs directly with
//! the nanosecond time grids used everywhere else.

use std::fmt;

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Conversion factor from s⁻¹ to ns⁻¹.
pub const PER_SECOND_TO_PER_NS: f64 = 1e-9;

/// Tolerance used for the population sum invariant.
pub const POPULATION_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("degenerate steady state: {0}")]
    DegenerateSteadyState(String),
    #[error("invalid populations: {0}")]
    Populations(String),
    #[error(
        "calibration failed: {reason} (target {target:.6}, best achievable {achievable:.6}, residual {residual:.3e})"
    )]
    Calibration {
        reason: String,
        target: f64,
        achievable: f64,
        residual: f64,
    },
}

fn param_err(name: &'static str, value: f64, reason: &'static str) -> ModelError {
    ModelError::Parameter {
        name,
        value,
        reason,
    }
}

pub(crate) fn check_rate(name: &'static str, value: f64) -> Result<(), ModelError> {
    if !value.is_finite() || value < 0.0 {
        return Err(param_err(name, value, "rates must be finite and >= 0"));
    }
    Ok(())
}

/// One of the five model levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Gs0,
    Gs1,
    Es0,
    Es1,
    Is,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Gs0, Level::Gs1, Level::Es0, Level::Es1, Level::Is];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Level::Gs0 => "GS(m_s=0)",
            Level::Gs1 => "GS(m_s=±1)",
            Level::Es0 => "ES(m_s=0)",
            Level::Es1 => "ES(m_s=±1)",
            Level::Is => "IS",
        }
    }
}

/// Transition rates of the five-level model, all in s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    /// Radiative decay ES → GS, spin conserving.
    pub k_r: f64,
    /// Intersystem crossing ES(0) → IS.
    pub gamma0: f64,
    /// Intersystem crossing ES(±1) → IS.
    pub gamma1: f64,
    /// IS → GS(0).
    pub kappa0: f64,
    /// IS → GS(±1).
    pub kappa1: f64,
    /// Ground-state spin-lattice relaxation 0 → ±1.
    #[serde(default)]
    pub k_sl_0to1: f64,
    /// Ground-state spin-lattice relaxation ±1 → 0.
    #[serde(default)]
    pub k_sl_1to0: f64,
}

impl RateParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_rate("k_r", self.k_r)?;
        check_rate("gamma0", self.gamma0)?;
        check_rate("gamma1", self.gamma1)?;
        check_rate("kappa0", self.kappa0)?;
        check_rate("kappa1", self.kappa1)?;
        check_rate("k_sl_0to1", self.k_sl_0to1)?;
        check_rate("k_sl_1to0", self.k_sl_1to0)?;
        Ok(())
    }

    /// Intermediate-state lifetime 1/(κ₀+κ₁) in ns, `None` when both κ vanish.
    pub fn t_is_ns(&self) -> Option<f64> {
        let sum = self.kappa0 + self.kappa1;
        (sum > 0.0).then(|| 1e9 / sum)
    }

    /// Spin-lattice rates `(0→±1, ±1→0)` in s⁻¹ for a relaxation time `t1_ns`
    /// toward the thermal ratio `n(±1)/n(0) = thermal_ratio`.
    pub fn spin_lattice_rates(t1_ns: f64, thermal_ratio: f64) -> Result<(f64, f64), ModelError> {
        if !(t1_ns > 0.0) {
            return Err(param_err("t1_ns", t1_ns, "must be > 0"));
        }
        if !(thermal_ratio > 0.0) || !thermal_ratio.is_finite() {
            return Err(param_err("thermal_ratio", thermal_ratio, "must be > 0"));
        }
        let total = 1e9 / t1_ns;
        let up = total * thermal_ratio / (1.0 + thermal_ratio);
        Ok((up, total - up))
    }

    pub fn with_t1(mut self, t1_ns: f64, thermal_ratio: f64) -> Result<Self, ModelError> {
        let (up, down) = Self::spin_lattice_rates(t1_ns, thermal_ratio)?;
        self.k_sl_0to1 = up;
        self.k_sl_1to0 = down;
        Ok(self)
    }

    pub fn without_spin_lattice(mut self) -> Self {
        self.k_sl_0to1 = 0.0;
        self.k_sl_1to0 = 0.0;
        self
    }

    /// Ground-state T1 in ns implied by the spin-lattice rates.
    pub fn t1_ns(&self) -> Option<f64> {
        let sum = self.k_sl_0to1 + self.k_sl_1to0;
        (sum > 0.0).then(|| 1e9 / sum)
    }

    /// Non-fatal checks of the polarizing regime (γ₀ < γ₁, κ₀ > κ₁).
    pub fn regime_warnings(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.gamma0 >= self.gamma1 {
            out.push("gamma0 >= gamma1: ES(±1) is not preferentially shelved");
        }
        if self.kappa0 <= self.kappa1 {
            out.push("kappa0 <= kappa1: IS decay does not polarize into m_s=0");
        }
        out
    }
}

/// Occupation fractions of the five levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub n_gs0: f64,
    pub n_gs1: f64,
    pub n_es0: f64,
    pub n_es1: f64,
    pub n_is: f64,
}

impl Populations {
    pub fn new(n_gs0: f64, n_gs1: f64, n_es0: f64, n_es1: f64, n_is: f64) -> Self {
        Self {
            n_gs0,
            n_gs1,
            n_es0,
            n_es1,
            n_is,
        }
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.n_gs0, self.n_gs1, self.n_es0, self.n_es1, self.n_is]
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::from(self.to_array())
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    /// All population in a single level.
    pub fn pure(level: Level) -> Self {
        let mut a = [0.0; 5];
        a[level.index()] = 1.0;
        Self::from_array(a)
    }

    pub fn get(&self, level: Level) -> f64 {
        self.to_array()[level.index()]
    }

    pub fn sum(&self) -> f64 {
        self.to_array().iter().sum()
    }

    pub fn ground(&self) -> f64 {
        self.n_gs0 + self.n_gs1
    }

    pub fn excited(&self) -> f64 {
        self.n_es0 + self.n_es1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (level, v) in Level::ALL.iter().zip(self.to_array()) {
            if !v.is_finite() || !(-POPULATION_SUM_TOL..=1.0 + POPULATION_SUM_TOL).contains(&v) {
                return Err(ModelError::Populations(format!(
                    "{} = {v} outside [0, 1]",
                    level.label()
                )));
            }
        }
        let s = self.sum();
        if (s - 1.0).abs() > POPULATION_SUM_TOL {
            return Err(ModelError::Populations(format!("components sum to {s}, not 1")));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Populations) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for Populations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(gs0 {:.6}, gs1 {:.6}, es0 {:.6}, es1 {:.6}, is {:.6})",
            self.n_gs0, self.n_gs1, self.n_es0, self.n_es1, self.n_is
        )
    }
}

/// Everything that describes a particular defect ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSystemConfig {
    pub rates: RateParams,
    /// Ground-state zero-field splitting, GHz.
    pub d_gs_ghz: f64,
    /// Excited-state zero-field splitting, GHz.
    pub d_es_ghz: f64,
    /// Hyperfine coupling to the nearest nitrogen nuclei, MHz. No default.
    pub hyperfine_a_mhz: Option<f64>,
    /// Thermal ratio n(±1)/n(0).
    pub thermal_ratio: f64,
    /// Nominal temperature, metadata only.
    pub temperature_label_k: Option<f64>,
}

impl SpinSystemConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.rates.validate()?;
        if !(self.d_gs_ghz > 0.0) {
            return Err(param_err("d_gs_ghz", self.d_gs_ghz, "must be > 0"));
        }
        if !(self.d_es_ghz > 0.0) {
            return Err(param_err("d_es_ghz", self.d_es_ghz, "must be > 0"));
        }
        if !(self.thermal_ratio > 0.0) || !self.thermal_ratio.is_finite() {
            return Err(param_err("thermal_ratio", self.thermal_ratio, "must be > 0"));
        }
        if let Some(a) = self.hyperfine_a_mhz {
            if !a.is_finite() || a < 0.0 {
                return Err(param_err("hyperfine_a_mhz", a, "must be >= 0"));
            }
        }
        let (up, down) = (self.rates.k_sl_0to1, self.rates.k_sl_1to0);
        if up > 0.0 || down > 0.0 {
            let ratio = up / down;
            if !(((ratio - self.thermal_ratio) / self.thermal_ratio).abs() < 1e-9) {
                return Err(param_err(
                    "k_sl_0to1/k_sl_1to0",
                    ratio,
                    "spin-lattice rates must satisfy detailed balance with thermal_ratio",
                ));
            }
        }
        for w in self.rates.regime_warnings() {
            log::warn!("{w}");
        }
        Ok(())
    }
}

/// Generator `M` (ns⁻¹) with `d(pops)/dt = M · pops`.
///
/// Off-diagonal entry `M[i][j]` is the rate from level `j` into level `i`; each
/// diagonal entry is minus the total outflow of its column.
pub fn rate_matrix(params: &RateParams, k_e: f64) -> Result<Matrix5<f64>, ModelError> {
    params.validate()?;
    check_rate("k_e", k_e)?;
    let s = PER_SECOND_TO_PER_NS;
    let (gs0, gs1, es0, es1, is) = (0, 1, 2, 3, 4);
    let couplings = [
        (gs0, es0, k_e),
        (gs1, es1, k_e),
        (es0, gs0, params.k_r),
        (es1, gs1, params.k_r),
        (es0, is, params.gamma0),
        (es1, is, params.gamma1),
        (is, gs0, params.kappa0),
        (is, gs1, params.kappa1),
        (gs0, gs1, params.k_sl_0to1),
        (gs1, gs0, params.k_sl_1to0),
    ];
    let mut m = Matrix5::zeros();
    for (from, to, rate) in couplings {
        m[(to, from)] += rate * s;
    }
    for col in 0..5 {
        let out: f64 = (0..5).filter(|&r| r != col).map(|r| m[(r, col)]).sum();
        m[(col, col)] = -out;
    }
    Ok(m)
}

/// Thermal ground-state populations `n(±1)/n(0) = thermal_ratio`.
pub fn thermal_populations(thermal_ratio: f64) -> Result<Populations, ModelError> {
    if !(thermal_ratio > 0.0) || !thermal_ratio.is_finite() {
        return Err(param_err("thermal_ratio", thermal_ratio, "must be > 0"));
    }
    let n0 = 1.0 / (1.0 + thermal_ratio);
    Ok(Populations::new(n0, thermal_ratio / (1.0 + thermal_ratio), 0.0, 0.0, 0.0))
}

/// Closed communicating classes of the transition graph of `m`.
fn closed_classes(m: &Matrix5<f64>) -> Vec<Vec<Level>> {
    let mut reach = [[false; 5]; 5];
    for (j, row) in reach.iter_mut().enumerate() {
        row[j] = true;
        for (i, r) in row.iter_mut().enumerate() {
            if i != j && m[(i, j)] > 0.0 {
                *r = true;
            }
        }
    }
    for k in 0..5 {
        for i in 0..5 {
            for j in 0..5 {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut seen = [false; 5];
    let mut classes = Vec::new();
    for i in 0..5 {
        if seen[i] {
            continue;
        }
        let class: Vec<usize> = (0..5).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &class {
            seen[j] = true;
        }
        let closed = class
            .iter()
            .all(|&j| (0..5).all(|t| !reach[j][t] || class.contains(&t)));
        if closed {
            classes.push(class.into_iter().map(|j| Level::ALL[j]).collect());
        }
    }
    classes
}

/// Normalized stationary populations under constant excitation `k_e`.
pub fn steady_state(params: &RateParams, k_e: f64) -> Result<Populations, ModelError> {
    let m = rate_matrix(params, k_e)?;
    let classes = closed_classes(&m);
    if classes.len() != 1 {
        let names: Vec<String> = classes
            .iter()
            .map(|c| {
                let labels: Vec<&str> = c.iter().map(|l| l.label()).collect();
                format!("{{{}}}", labels.join(", "))
            })
            .collect();
        return Err(ModelError::DegenerateSteadyState(format!(
            "{} disconnected absorbing subspaces: {}",
            classes.len(),
            names.join(" and ")
        )));
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let mut v: Vector5<f64> = v_t.row(imin).transpose();
    let total: f64 = v.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(ModelError::DegenerateSteadyState(
            "null vector has zero total weight".into(),
        ));
    }
    v /= total;
    // The null vector of a generator is sign-definite; clear round-off.
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    v /= total;
    Ok(Populations::from_vector(&v))
}

/// High-excitation limit of the shelved fraction, γ̄·T_IS / (1 + γ̄·T_IS), where γ̄
/// is the intersystem-crossing rate averaged over the excited-state populations
/// at `k_e`.
pub fn high_power_is_limit(params: &RateParams, k_e: f64) -> Result<f64, ModelError> {
    let ss = steady_state(params, k_e)?;
    let gbar = weighted_isc_rate(params, &ss);
    let t = 1.0 / (params.kappa0 + params.kappa1);
    let x = gbar * t;
    Ok(x / (1.0 + x))
}

/// ISC rate (s⁻¹) averaged with the excited-state populations of `pops`.
pub fn weighted_isc_rate(params: &RateParams, pops: &Populations) -> f64 {
    let w = pops.excited();
    if w <= 0.0 {
        return 0.5 * (params.gamma0 + params.gamma1);
    }
    (params.gamma0 * pops.n_es0 + params.gamma1 * pops.n_es1) / w
}

/// Measured observables a calibrated parameter set has to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// Intermediate-state lifetime, ns.
    pub t_is_ns: f64,
    /// Excited-state lifetime 1/(k_r + γ̄), ns.
    pub tau_es_ns: f64,
    /// Steady-state IS occupation at `k_exp`.
    pub is_fraction: f64,
    /// Reference pump rate, s⁻¹.
    pub k_exp: f64,
    /// Ground-state T1 in ns; `None` leaves the spin-lattice rates at zero.
    pub t1_ns: Option<f64>,
    pub thermal_ratio: f64,
}

/// Ratios the observables cannot pin down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPriors {
    /// κ₀/κ₁.
    pub kappa_ratio: f64,
    /// γ₁/γ₀.
    pub gamma_ratio: f64,
}

fn positive(name: &'static str, v: f64) -> Result<(), ModelError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(param_err(name, v, "must be > 0"));
    }
    Ok(())
}

/// Reconstruct a full rate set from the measured observables.
///
/// κ₀ + κ₁ is fixed by the IS lifetime and split by the κ prior. The excited
/// state decay `1/τ_ES` is split between `k_r` and the population-weighted ISC
/// rate through the ISC branching ratio, which is bisected until the steady-state
/// IS fraction at `k_exp` matches the target.
pub fn calibrate_rates(
    targets: &CalibrationTargets,
    priors: &CalibrationPriors,
) -> Result<RateParams, ModelError> {
    positive("t_is_ns", targets.t_is_ns)?;
    positive("tau_es_ns", targets.tau_es_ns)?;
    positive("is_fraction", targets.is_fraction)?;
    positive("k_exp", targets.k_exp)?;
    positive("kappa_ratio", priors.kappa_ratio)?;
    positive("gamma_ratio", priors.gamma_ratio)?;
    if targets.is_fraction >= 1.0 {
        return Err(param_err("is_fraction", targets.is_fraction, "must be < 1"));
    }
    let kappa_sum = 1e9 / targets.t_is_ns;
    let kappa1 = kappa_sum / (1.0 + priors.kappa_ratio);
    let kappa0 = kappa_sum - kappa1;
    let decay = 1e9 / targets.tau_es_ns;
    let base = RateParams {
        k_r: 0.0,
        gamma0: 0.0,
        gamma1: 0.0,
        kappa0,
        kappa1,
        k_sl_0to1: 0.0,
        k_sl_1to0: 0.0,
    };
    let base = match targets.t1_ns {
        Some(t1) => base.with_t1(t1, targets.thermal_ratio)?,
        None => base,
    };

    // For a given branching ratio b the ES decay splits into k_r = (1-b)/τ and
    // γ̄ = b/τ; γ₀ follows from the ES weights by fixed-point iteration.
    let params_for = |branching: f64| -> Result<RateParams, ModelError> {
        let gbar = branching * decay;
        let mut p = base;
        p.k_r = decay - gbar;
        let (mut w0, mut w1) = (0.5, 0.5);
        for _ in 0..200 {
            let g0 = gbar / (w0 + priors.gamma_ratio * w1);
            p.gamma0 = g0;
            p.gamma1 = g0 * priors.gamma_ratio;
            let ss = steady_state(&p, targets.k_exp)?;
            let we = ss.excited();
            let (nw0, nw1) = if we > 0.0 {
                (ss.n_es0 / we, ss.n_es1 / we)
            } else {
                (0.5, 0.5)
            };
            let change = (nw0 - w0).abs() + (nw1 - w1).abs();
            w0 = nw0;
            w1 = nw1;
            if change < 1e-15 {
                break;
            }
        }
        let g0 = gbar / (w0 + priors.gamma_ratio * w1);
        p.gamma0 = g0;
        p.gamma1 = g0 * priors.gamma_ratio;
        Ok(p)
    };
    let is_at = |b: f64| -> Result<f64, ModelError> {
        Ok(steady_state(&params_for(b)?, targets.k_exp)?.n_is)
    };

    let target = targets.is_fraction;
    let best = is_at(1.0)?;
    if best < target {
        return Err(ModelError::Calibration {
            reason: "IS fraction unreachable even with unit ISC branching (k_r = 0)".into(),
            target,
            achievable: best,
            residual: target - best,
        });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if is_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let params = params_for(0.5 * (lo + hi))?;
    let reached = steady_state(&params, targets.k_exp)?;
    let residual = (reached.n_is - target).abs();
    if residual > 1e-3 {
        return Err(ModelError::Calibration {
            reason: "bisection on ISC branching did not converge".into(),
            target,
            achievable: reached.n_is,
            residual,
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_params() -> RateParams {
        RateParams {
            k_r: 5e7,
            gamma0: 4e8,
            gamma1: 8e8,
            kappa0: 3.5e7,
            kappa1: 0.7e7,
            k_sl_0to1: 2.0 / 3.0 * 7e4,
            k_sl_1to0: 1.0 / 3.0 * 7e4,
        }
    }

    #[test]
    fn zero_rates_give_zero_matrix() {
        let p = RateParams {
            k_r: 0.0,
            gamma0: 0.0,
            gamma1: 0.0,
            kappa0: 0.0,
            kappa1: 0.0,
            k_sl_0to1: 0.0,
            k_sl_1to0: 0.0,
        };
        assert_eq!(rate_matrix(&p, 0.0).unwrap(), Matrix5::zeros());
    }

    #[test]
    fn columns_sum_to_zero_and_offdiagonals_nonnegative() {
        let m = rate_matrix(&sample_params(), 2.7e7).unwrap();
        for c in 0..5 {
            let s: f64 = m.column(c).iter().sum();
            assert!(s.abs() < 1e-12, "column {c} sums to {s}");
            for r in 0..5 {
                if r != c {
                    assert!(m[(r, c)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn negative_rate_rejected() {
        let mut p = sample_params();
        p.gamma1 = -1.0;
        assert!(matches!(
            rate_matrix(&p, 1.0),
            Err(ModelError::Parameter { name: "gamma1", .. })
        ));
        assert!(rate_matrix(&sample_params(), -1.0).is_err());
    }

    #[test]
    fn thermal_examples() {
        let t = thermal_populations(2.0).unwrap();
        assert_relative_eq!(t.n_gs0, 1.0 / 3.0);
        assert_relative_eq!(t.n_gs1, 2.0 / 3.0);
        assert_eq!((t.n_es0, t.n_es1, t.n_is), (0.0, 0.0, 0.0));
        assert_relative_eq!(t.sum(), 1.0);
        let t = thermal_populations(1.0).unwrap();
        assert_eq!((t.n_gs0, t.n_gs1), (0.5, 0.5));
        assert!(thermal_populations(0.0).is_err());
        assert!(thermal_populations(-2.0).is_err());
    }

    #[test]
    fn dark_steady_state_is_thermal() {
        let ss = steady_state(&sample_params(), 0.0).unwrap();
        let th = thermal_populations(2.0).unwrap();
        assert!(ss.max_abs_diff(&th) < 1e-12, "{ss}");
    }

    #[test]
    fn symmetric_branches_give_unpolarized_steady_state() {
        let p = RateParams {
            k_r: 1e8,
            gamma0: 5e8,
            gamma1: 5e8,
            kappa0: 2e7,
            kappa1: 2e7,
            k_sl_0to1: 0.0,
            k_sl_1to0: 0.0,
        };
        let ss = steady_state(&p, 3e7).unwrap();
        assert_relative_eq!(ss.n_gs0, ss.n_gs1, max_relative = 1e-10);
        assert_relative_eq!(ss.n_es0, ss.n_es1, max_relative = 1e-10);
    }

    #[test]
    fn disconnected_ground_state_is_degenerate() {
        let p = sample_params().without_spin_lattice();
        match steady_state(&p, 0.0) {
            Err(ModelError::DegenerateSteadyState(msg)) => {
                assert!(msg.contains("GS(m_s=0)"), "{msg}");
                assert!(msg.contains("GS(m_s=±1)"), "{msg}");
            }
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let p = sample_params();
        for k in [1e5, 2.7e7, 1e10, 1e13] {
            let ss = steady_state(&p, k).unwrap();
            let m = rate_matrix(&p, k).unwrap();
            let r = m * ss.to_vector();
            assert!(r.amax() < 1e-10, "k_e {k}: residual {}", r.amax());
            ss.validate().unwrap();
        }
    }

    #[test]
    fn t1_split_obeys_detailed_balance() {
        let (up, down) = RateParams::spin_lattice_rates(14_000.0, 2.0).unwrap();
        assert_relative_eq!(up / down, 2.0, max_relative = 1e-12);
        assert_relative_eq!(1e9 / (up + down), 14_000.0, max_relative = 1e-12);
    }

    #[test]
    fn regime_warnings_flag_inverted_rates() {
        let mut p = sample_params();
        assert!(p.regime_warnings().is_empty());
        p.gamma0 = 2.0 * p.gamma1;
        p.kappa1 = 2.0 * p.kappa0;
        assert_eq!(p.regime_warnings().len(), 2);
    }

    fn rt_targets() -> CalibrationTargets {
        CalibrationTargets {
            t_is_ns: 24.0,
            tau_es_ns: 1.2,
            is_fraction: 0.385,
            k_exp: 2.7e7,
            t1_ns: Some(14_000.0),
            thermal_ratio: 2.0,
        }
    }

    #[test]
    fn calibration_reproduces_targets() {
        let priors = CalibrationPriors {
            kappa_ratio: 10.0,
            gamma_ratio: 2.0,
        };
        let t = rt_targets();
        let p = calibrate_rates(&t, &priors).unwrap();
        assert_relative_eq!(p.kappa0 + p.kappa1, 1e9 / 24.0, max_relative = 1e-15);
        assert_relative_eq!(p.t_is_ns().unwrap(), 24.0, max_relative = 1e-12);
        assert_relative_eq!(p.kappa0 / p.kappa1, 10.0, max_relative = 1e-12);
        assert_relative_eq!(p.gamma1 / p.gamma0, 2.0, max_relative = 1e-12);
        let ss = steady_state(&p, t.k_exp).unwrap();
        let tau = 1e9 / (p.k_r + weighted_isc_rate(&p, &ss));
        assert_relative_eq!(tau, 1.2, max_relative = 1e-6);
        assert!((ss.n_is - 0.385).abs() < 1e-3);
    }

    #[test]
    fn unreachable_is_fraction_reports_residual() {
        let mut t = rt_targets();
        t.is_fraction = 0.39;
        let priors = CalibrationPriors {
            kappa_ratio: 10.0,
            gamma_ratio: 2.0,
        };
        match calibrate_rates(&t, &priors) {
            Err(ModelError::Calibration {
                achievable,
                residual,
                ..
            }) => {
                assert!(achievable < 0.39 && achievable > 0.38);
                assert!(residual > 0.0);
            }
            other => panic!("expected calibration failure, got {other:?}"),
        }
    }

    #[test]
    fn symmetric_priors_give_unpolarized_ground_state() {
        let mut t = rt_targets();
        t.t1_ns = None;
        let priors = CalibrationPriors {
            kappa_ratio: 1.0,
            gamma_ratio: 1.0,
        };
        let p = calibrate_rates(&t, &priors).unwrap();
        let ss = steady_state(&p, t.k_exp).unwrap();
        assert_relative_eq!(ss.n_gs0 / ss.n_gs1, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn calibration_rejects_bad_targets() {
        let priors = CalibrationPriors {
            kappa_ratio: 10.0,
            gamma_ratio: 2.0,
        };
        let mut t = rt_targets();
        t.is_fraction = 1.0;
        assert!(calibrate_rates(&t, &priors).is_err());
        let mut t = rt_targets();
        t.t_is_ns = 0.0;
        assert!(calibrate_rates(&t, &priors).is_err());
    }

    #[test]
    fn spin_system_detailed_balance_checked() {
        let mut cfg = SpinSystemConfig {
            rates: sample_params(),
            d_gs_ghz: 3.49,
            d_es_ghz: 2.09,
            hyperfine_a_mhz: None,
            thermal_ratio: 2.0,
            temperature_label_k: Some(300.0),
        };
        cfg.validate().unwrap();
        cfg.thermal_ratio = 3.0;
        assert!(cfg.validate().is_err());
        cfg.thermal_ratio = 2.0;
        cfg.d_gs_ghz = 0.0;
        assert!(cfg.validate().is_err());
    }
}
