//! Nonlinear least squares: a Levenberg-Marquardt engine and the analysis models.
//!
//! Positive parameters (time constants, widths, periods) are fitted as their
//! logarithms so every trial point stays inside the model domain. Reported
//! 1σ uncertainties come from the covariance scaled by the reduced χ².

mod engine;
mod guess;
mod models;

pub use engine::{central_jacobian, levenberg_marquardt, LmConfig, LmOutcome};
pub use guess::{initial_guess, line_fit, Guess};
pub use models::FitModel;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use models::Transform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("{model} needs at least {need} points, got {got}")]
    InsufficientPoints {
        model: &'static str,
        need: usize,
        got: usize,
    },
    #[error("x has {x} points but y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("sigma[{index}] = {value}; uncertainties must be > 0")]
    BadSigma { index: usize, value: f64 },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{model}: parameter {param} = {value} is outside the model domain")]
    Domain {
        model: &'static str,
        param: &'static str,
        value: f64,
    },
    #[error("{model} takes {expected} parameters, got {got}")]
    ParamCount {
        model: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown fit model `{0}`")]
    UnknownModel(String),
    #[error("{model} fit did not converge after {iterations} iterations")]
    NotConverged { model: &'static str, iterations: usize },
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Per-point 1σ uncertainties; unit weights when absent.
    pub sigma: Option<Vec<f64>>,
    /// Starting parameters in natural units, overriding the heuristic guess.
    pub init: Option<Vec<f64>>,
    /// Damped sine only: also start from 8 jittered guesses and keep the best.
    pub multistart: bool,
    pub lm: LmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub formula: String,
    pub param_names: Vec<String>,
    #[serde(with = "crate::io::float::vec")]
    pub params: Vec<f64>,
    /// 1σ, from the reduced-χ²-scaled covariance; infinite when singular.
    #[serde(with = "crate::io::float::vec")]
    pub uncertainties: Vec<f64>,
    #[serde(with = "crate::io::float")]
    pub chi2: f64,
    #[serde(with = "crate::io::float")]
    pub reduced_chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    /// `false` marks the estimates as non-authoritative.
    pub converged: bool,
    /// The starting point came from fallback defaults.
    pub guess_flagged: bool,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.params[i])
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.uncertainties[i])
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.model.eval_raw(&self.params, x)
    }

    pub fn require_converged(self) -> Result<Self, FitError> {
        if self.converged {
            Ok(self)
        } else {
            Err(FitError::NotConverged {
                model: self.model.name(),
                iterations: self.iterations,
            })
        }
    }
}

fn validate(model: FitModel, x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<(), FitError> {
    if x.len() != y.len() {
        return Err(FitError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < model.n_params() {
        return Err(FitError::InsufficientPoints {
            model: model.name(),
            need: model.n_params(),
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(FitError::Data(format!("non-finite value at position {}", i % x.len())));
    }
    if model == FitModel::PowerLaw && x.iter().any(|&v| v <= 0.0) {
        return Err(FitError::Data("power_law needs x > 0".into()));
    }
    if let Some(s) = sigma {
        if s.len() != x.len() {
            return Err(FitError::LengthMismatch { x: x.len(), y: s.len() });
        }
        if let Some((index, &value)) = s.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(FitError::BadSigma { index, value });
        }
    }
    Ok(())
}

fn run(model: FitModel, x: &[f64], y: &[f64], w: &[f64], p0: &[f64], cfg: &LmConfig) -> LmOutcome {
    let residuals = |u: &[f64], r: &mut [f64]| {
        let p = model.natural_params(u);
        for i in 0..x.len() {
            r[i] = (y[i] - model.eval_raw(&p, x[i])) * w[i];
            if !r[i].is_finite() {
                return false;
            }
        }
        true
    };
    levenberg_marquardt(residuals, &model.to_internal(p0), x.len(), cfg)
}

/// Jittered restarts around the heuristic damped-sine guess.
fn sine_starts(p: &[f64]) -> Vec<Vec<f64>> {
    const JITTER: [(f64, f64, f64); 8] = [
        (1.0, 1.0, 0.0),
        (0.8, 1.0, 0.0),
        (1.25, 1.0, 0.0),
        (1.0, 0.5, 0.25),
        (1.0, 2.0, -0.25),
        (0.67, 1.0, 0.5),
        (1.5, 1.0, 0.5),
        (1.0, 4.0, 0.0),
    ];
    JITTER
        .iter()
        .map(|&(fp, ft2, ftau)| vec![p[0], p[1] * ft2, p[2] * fp, p[3] + ftau * p[2]])
        .collect()
}

/// Fit `model` to `(x, y)`. Non-convergence is reported through
/// [`FitResult::converged`], not as an error.
pub fn fit(model: FitModel, x: &[f64], y: &[f64], opts: &FitOptions) -> Result<FitResult, FitError> {
    validate(model, x, y, opts.sigma.as_deref())?;
    let (p0, flagged) = match &opts.init {
        Some(p) => {
            model.check_params(p)?;
            (p.clone(), false)
        }
        None => {
            let g = initial_guess(model, x, y);
            (g.params, g.flagged)
        }
    };
    let w: Vec<f64> = match &opts.sigma {
        Some(s) => s.iter().map(|v| 1.0 / v).collect(),
        None => vec![1.0; x.len()],
    };
    let starts = if opts.multistart && model == FitModel::DampedSin {
        sine_starts(&p0)
    } else {
        vec![p0]
    };
    let best = starts
        .iter()
        .map(|p| run(model, x, y, &w, p, &opts.lm))
        .min_by(|a, b| (!a.converged, a.chi2).partial_cmp(&(!b.converged, b.chi2)).unwrap_or(std::cmp::Ordering::Equal))
        .expect("at least one start");

    let dof = x.len() - model.n_params();
    let reduced = if dof > 0 { best.chi2 / dof as f64 } else { 0.0 };
    let mut params = model.natural_params(&best.params);
    let cov = best.jtj.clone().try_inverse();
    let mut uncertainties: Vec<f64> = (0..params.len())
        .map(|k| {
            let var_u = cov.as_ref().map_or(f64::INFINITY, |c| c[(k, k)] * reduced);
            let su = if var_u >= 0.0 { var_u.sqrt() } else { f64::INFINITY };
            match model.transforms()[k] {
                Transform::Identity => su,
                Transform::Log => params[k] * su,
            }
        })
        .collect();
    if model == FitModel::DoubleGaussian && params[2] > params[5] {
        for (a, b) in [(1, 4), (2, 5), (3, 6)] {
            uncertainties.swap(a, b);
        }
    }
    model.canonicalize(&mut params);
    Ok(FitResult {
        model,
        formula: model.formula().to_string(),
        param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
        params,
        uncertainties,
        chi2: best.chi2,
        reduced_chi2: reduced,
        dof,
        iterations: best.iterations,
        converged: best.converged,
        guess_flagged: flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(model: FitModel, p: &[f64], x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| model.eval(p, v).unwrap()).collect()
    }

    fn assert_recovered(r: &FitResult, truth: &[f64], tol: f64) {
        assert!(r.converged, "{r:?}");
        for (a, b) in r.params.iter().zip(truth) {
            assert!(((a - b) / b).abs() < tol, "{:?} vs {truth:?}", r.params);
        }
    }

    #[test]
    fn exp_decay_noiseless() {
        let x: Vec<f64> = (0..80).map(|i| 2.0 * i as f64).collect();
        let truth = [1.0, 0.5, 24.0];
        let y = synth(FitModel::ExpDecay, &truth, &x);
        let r = fit(FitModel::ExpDecay, &x, &y, &FitOptions::default()).unwrap();
        assert_recovered(&r, &truth, 1e-6);
    }

    #[test]
    fn damped_sin_noiseless() {
        let x: Vec<f64> = (0..75).map(|i| 2.0 + 2.0 * i as f64).collect();
        let truth = [0.08, 56.0, 40.0, 10.0];
        let y = synth(FitModel::DampedSin, &truth, &x);
        let r = fit(FitModel::DampedSin, &x, &y, &FitOptions::default()).unwrap();
        assert_recovered(&r, &truth, 1e-6);
        let opts = FitOptions {
            multistart: true,
            ..Default::default()
        };
        let r = fit(FitModel::DampedSin, &x, &y, &opts).unwrap();
        assert_recovered(&r, &truth, 1e-6);
    }

    #[test]
    fn collinear_points() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y = [1.0, 3.0, 5.0, 11.0];
        let r = fit(FitModel::Linear, &x, &y, &FitOptions::default()).unwrap();
        assert!(r.chi2 < 1e-20, "{r:?}");
        assert!(r.converged);
    }

    #[test]
    fn input_errors() {
        let o = FitOptions::default();
        assert!(matches!(
            fit(FitModel::ExpDecay, &[1.0, 2.0], &[1.0, 2.0], &o),
            Err(FitError::InsufficientPoints { need: 3, got: 2, .. })
        ));
        assert!(matches!(
            fit(FitModel::Linear, &[1.0, 2.0], &[1.0], &o),
            Err(FitError::LengthMismatch { .. })
        ));
        let bad = FitOptions {
            sigma: Some(vec![1.0, 0.0, 1.0]),
            ..Default::default()
        };
        assert!(matches!(
            fit(FitModel::Linear, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &bad),
            Err(FitError::BadSigma { index: 1, .. })
        ));
        assert!(fit(FitModel::PowerLaw, &[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0], &o).is_err());
        let init = FitOptions {
            init: Some(vec![1.0, 1.0, -3.0]),
            ..Default::default()
        };
        assert!(matches!(
            fit(FitModel::ExpDecay, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &init),
            Err(FitError::Domain { param: "T", .. })
        ));
    }

    #[test]
    fn constant_data_for_sine_does_not_crash() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let r = fit(FitModel::DampedSin, &x, &[0.0; 20], &FitOptions::default()).unwrap();
        assert!(r.guess_flagged);
        assert!(r.uncertainties.iter().all(|u| *u >= 0.0));
    }

    #[test]
    fn uncertainties_scale_with_noise() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 + 0.5 * v + if i % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let r = fit(FitModel::Linear, &x, &y, &FitOptions::default()).unwrap();
        let (se0, se1) = (r.error("c0").unwrap(), r.error("c1").unwrap());
        assert!(se0 > 0.0 && se1 > 0.0 && se1 < se0);
        assert!((r.value("c1").unwrap() - 0.5).abs() < 3.0 * se1);
    }

    #[test]
    fn serializes() {
        let x = [0.0, 1.0, 2.0];
        let r = fit(FitModel::Linear, &x, &[1.0, 2.0, 3.0], &FitOptions::default()).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"model\":\"linear\""));
        let back: FitResult = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
