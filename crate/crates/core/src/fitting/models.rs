use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FitError;

/// Analytic fit models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `y0 + A·exp(−t/T)`
    ExpDecay,
    /// `y0 − A·exp(−τ/T)`, `A > 0`
    ExpRecovery,
    /// `A·exp(−τ/T2ρ)·sin(2π/T·(τ − τ0))`
    DampedSin,
    /// `b + A1·exp(−(x−μ1)²/2σ1²) + A2·exp(−(x−μ2)²/2σ2²)`
    DoubleGaussian,
    /// `t0 + b·k^a`, `b > 0`
    PowerLaw,
    /// `c0 + c1·x`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Transform {
    Identity,
    /// Strictly positive parameter fitted as its logarithm.
    Log,
}

use Transform::{Identity as Id, Log};

impl FitModel {
    pub const ALL: [FitModel; 6] = [
        FitModel::ExpDecay,
        FitModel::ExpRecovery,
        FitModel::DampedSin,
        FitModel::DoubleGaussian,
        FitModel::PowerLaw,
        FitModel::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FitModel::ExpDecay => "exp_decay",
            FitModel::ExpRecovery => "exp_recovery",
            FitModel::DampedSin => "damped_sin",
            FitModel::DoubleGaussian => "double_gaussian",
            FitModel::PowerLaw => "power_law",
            FitModel::Linear => "linear",
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            FitModel::ExpDecay => "y0 + A*exp(-t/T)",
            FitModel::ExpRecovery => "y0 - A*exp(-t/T)",
            FitModel::DampedSin => "A*exp(-t/T2rho)*sin(2*pi/T*(t - tau0))",
            FitModel::DoubleGaussian => {
                "b + A1*exp(-(x-mu1)^2/(2*sigma1^2)) + A2*exp(-(x-mu2)^2/(2*sigma2^2))"
            }
            FitModel::PowerLaw => "t0 + b*k^a",
            FitModel::Linear => "c0 + c1*x",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            FitModel::ExpDecay | FitModel::ExpRecovery => &["y0", "A", "T"],
            FitModel::DampedSin => &["A", "T2rho", "T", "tau0"],
            FitModel::DoubleGaussian => &["b", "A1", "mu1", "sigma1", "A2", "mu2", "sigma2"],
            FitModel::PowerLaw => &["t0", "b", "a"],
            FitModel::Linear => &["c0", "c1"],
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    pub(crate) fn transforms(self) -> &'static [Transform] {
        match self {
            FitModel::ExpDecay => &[Id, Id, Log],
            FitModel::ExpRecovery => &[Id, Log, Log],
            FitModel::DampedSin => &[Id, Log, Log, Id],
            FitModel::DoubleGaussian => &[Id, Id, Id, Log, Id, Id, Log],
            FitModel::PowerLaw => &[Id, Log, Id],
            FitModel::Linear => &[Id, Id],
        }
    }

    pub fn check_params(self, p: &[f64]) -> Result<(), FitError> {
        if p.len() != self.n_params() {
            return Err(FitError::ParamCount {
                model: self.name(),
                expected: self.n_params(),
                got: p.len(),
            });
        }
        for ((&v, name), t) in p.iter().zip(self.param_names()).zip(self.transforms()) {
            if !v.is_finite() || (*t == Log && v <= 0.0) {
                return Err(FitError::Domain {
                    model: self.name(),
                    param: name,
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Formula value without domain checks.
    pub(crate) fn eval_raw(self, p: &[f64], x: f64) -> f64 {
        match self {
            FitModel::ExpDecay => p[0] + p[1] * (-x / p[2]).exp(),
            FitModel::ExpRecovery => p[0] - p[1] * (-x / p[2]).exp(),
            FitModel::DampedSin => p[0] * (-x / p[1]).exp() * (TAU / p[2] * (x - p[3])).sin(),
            FitModel::DoubleGaussian => {
                let g = |a: f64, mu: f64, s: f64| a * (-(x - mu).powi(2) / (2.0 * s * s)).exp();
                p[0] + g(p[1], p[2], p[3]) + g(p[4], p[5], p[6])
            }
            FitModel::PowerLaw => p[0] + p[1] * x.powf(p[2]),
            FitModel::Linear => p[0] + p[1] * x,
        }
    }

    pub fn eval(self, p: &[f64], x: f64) -> Result<f64, FitError> {
        self.check_params(p)?;
        if self == FitModel::PowerLaw && !(x > 0.0) {
            return Err(FitError::Data(format!("power_law needs x > 0, got {x}")));
        }
        Ok(self.eval_raw(p, x))
    }

    pub(crate) fn to_internal(self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.transforms())
            .map(|(&v, t)| match t {
                Id => v,
                Log => v.ln(),
            })
            .collect()
    }

    pub(crate) fn natural_params(self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.transforms())
            .map(|(&v, t)| match t {
                Id => v,
                Log => v.exp(),
            })
            .collect()
    }

    /// Bring equivalent parameter sets to one representative: non-negative
    /// damped-sine amplitude with τ0 in [−T/2, T/2), Gaussians ordered by centre.
    pub fn canonicalize(self, p: &mut [f64]) {
        match self {
            FitModel::DampedSin => {
                let period = p[2];
                if p[0] < 0.0 {
                    p[0] = -p[0];
                    p[3] += period / 2.0;
                }
                p[3] = (p[3] + period / 2.0).rem_euclid(period) - period / 2.0;
            }
            FitModel::DoubleGaussian if p[2] > p[5] => {
                p.swap(1, 4);
                p.swap(2, 5);
                p.swap(3, 6);
            }
            _ => {}
        }
    }

    /// Central-difference Jacobian `∂f(x_i)/∂p_j` in natural parameters.
    pub fn jacobian(self, p: &[f64], x: &[f64]) -> Result<Vec<Vec<f64>>, FitError> {
        self.check_params(p)?;
        let mut out = vec![vec![0.0; p.len()]; x.len()];
        let mut q = p.to_vec();
        for j in 0..p.len() {
            let h = (1e-6 * p[j].abs()).max(1e-12);
            q[j] = p[j] + h;
            let plus: Vec<f64> = x.iter().map(|&xi| self.eval_raw(&q, xi)).collect();
            q[j] = p[j] - h;
            let minus: Vec<f64> = x.iter().map(|&xi| self.eval_raw(&q, xi)).collect();
            q[j] = p[j];
            let dh = (p[j] + h) - (p[j] - h);
            for i in 0..x.len() {
                out[i][j] = (plus[i] - minus[i]) / dh;
            }
        }
        Ok(out)
    }
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitModel {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, FitError> {
        FitModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| FitError::UnknownModel(s.to_string()))
    }
}
