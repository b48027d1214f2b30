//! Levenberg-Marquardt on an abstract residual vector.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iter: usize,
    pub lambda0: f64,
    /// Stop once an accepted step changes χ² by less than this fraction.
    pub rel_tol: f64,
    /// Give up after this many consecutive damping increases.
    pub max_escalations: usize,
    pub jac_rel_step: f64,
    pub jac_abs_floor: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            lambda0: 1e-3,
            rel_tol: 1e-10,
            max_escalations: 5,
            jac_rel_step: 1e-6,
            jac_abs_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `JᵀJ` of the residuals at the returned parameters.
    pub jtj: DMatrix<f64>,
}

/// Central-difference Jacobian of `f` (m outputs) at `p`.
///
/// Returns `None` if any evaluation fails.
pub fn central_jacobian<F>(f: &F, p: &[f64], m: usize, rel_step: f64, floor: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64], &mut [f64]) -> bool,
{
    let n = p.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..n {
        let h = (rel_step * p[j].abs()).max(floor);
        q[j] = p[j] + h;
        let ok_p = f(&q, &mut plus);
        q[j] = p[j] - h;
        let ok_m = f(&q, &mut minus);
        q[j] = p[j];
        if !ok_p || !ok_m {
            return None;
        }
        // actual spacing, not 2h, since p ± h may round
        let dh = (p[j] + h) - (p[j] - h);
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / dh;
        }
    }
    Some(jac)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Minimize `Σ r_i(p)²`. The closure fills the residual buffer and returns
/// `false` when `p` is outside the model's domain or produces non-finite values.
pub fn levenberg_marquardt<F>(residuals: F, p0: &[f64], m: usize, cfg: &LmConfig) -> LmOutcome
where
    F: Fn(&[f64], &mut [f64]) -> bool,
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = vec![0.0; m];
    if !residuals(&p, &mut r) {
        return LmOutcome {
            params: p,
            chi2: f64::INFINITY,
            iterations: 0,
            converged: false,
            jtj: DMatrix::zeros(n, n),
        };
    }
    let mut chi2 = sum_sq(&r);
    let mut lambda = cfg.lambda0;
    let mut trial = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;
    let mut jac = central_jacobian(&residuals, &p, m, cfg.jac_rel_step, cfg.jac_abs_floor);

    'outer: while iterations < cfg.max_iter {
        let Some(j) = jac.as_ref() else { break };
        iterations += 1;
        let jtj = j.transpose() * j;
        let g = j.transpose() * DVector::from_column_slice(&r);
        if chi2 == 0.0 || g.amax() == 0.0 {
            converged = true;
            break;
        }
        let mut escalations = 0;
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = a.cholesky().map(|c| c.solve(&(-&g)));
            let accepted = match step {
                Some(delta) if delta.iter().all(|d| d.is_finite()) => {
                    let cand: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                    if residuals(&cand, &mut trial) {
                        let c2 = sum_sq(&trial);
                        (c2 < chi2).then_some((cand, c2))
                    } else {
                        None
                    }
                }
                _ => None,
            };
            match accepted {
                Some((cand, c2)) => {
                    debug_assert!(c2 <= chi2);
                    let rel = (chi2 - c2) / chi2;
                    p = cand;
                    std::mem::swap(&mut r, &mut trial);
                    chi2 = c2;
                    lambda = (lambda / 10.0).max(1e-15);
                    jac = central_jacobian(&residuals, &p, m, cfg.jac_rel_step, cfg.jac_abs_floor);
                    if rel < cfg.rel_tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                None => {
                    escalations += 1;
                    lambda *= 10.0;
                    if escalations >= cfg.max_escalations {
                        converged = is_stationary(&jtj, &g, &p, chi2, cfg.rel_tol);
                        break 'outer;
                    }
                }
            }
        }
    }
    let jtj = jac
        .as_ref()
        .map(|j| j.transpose() * j)
        .unwrap_or_else(|| DMatrix::zeros(n, n));
    LmOutcome {
        params: p,
        chi2,
        iterations,
        converged,
        jtj,
    }
}

/// After repeated rejections, decide whether we sit at a minimum: either the
/// Gauss-Newton model promises no relative decrease, or its step is below the
/// parameters' rounding level.
fn is_stationary(jtj: &DMatrix<f64>, g: &DVector<f64>, p: &[f64], chi2: f64, rel_tol: f64) -> bool {
    let Ok(inv) = jtj.clone().pseudo_inverse(1e-14 * jtj.amax()) else {
        return false;
    };
    let step = &inv * g;
    let pred = g.dot(&step).abs();
    pred <= rel_tol * chi2
        || step
            .iter()
            .zip(p)
            .all(|(d, x)| d.abs() <= 1e-9 * (x.abs() + 1e-12))
}
