//! Deterministic starting points for each model.

use std::f64::consts::{E, TAU};

use super::models::FitModel;

/// Starting parameters; `flagged` marks degenerate data where fallback
/// defaults were used.
#[derive(Debug, Clone, PartialEq)]
pub struct Guess {
    pub params: Vec<f64>,
    pub flagged: bool,
}

fn sorted(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    (idx.iter().map(|&i| x[i]).collect(), idx.iter().map(|&i| y[i]).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Least squares `y ≈ c0·f0 + c1·f1`; also returns the residual sum of squares.
fn two_basis(f0: &[f64], f1: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let (mut a, mut b, mut c, mut d, mut e) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        a += f0[i] * f0[i];
        b += f0[i] * f1[i];
        c += f1[i] * f1[i];
        d += f0[i] * y[i];
        e += f1[i] * y[i];
    }
    let det = a * c - b * b;
    if !(det.abs() > 1e-300) || !det.is_finite() {
        return None;
    }
    let c0 = (d * c - b * e) / det;
    let c1 = (a * e - b * d) / det;
    let rss = (0..y.len())
        .map(|i| (y[i] - c0 * f0[i] - c1 * f1[i]).powi(2))
        .sum();
    Some((c0, c1, rss))
}

/// Closed-form straight line, `(c0, c1)`.
pub fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let ones = vec![1.0; x.len()];
    two_basis(&ones, x, y).map(|(c0, c1, _)| (c0, c1))
}

pub fn initial_guess(model: FitModel, x: &[f64], y: &[f64]) -> Guess {
    let (x, y) = sorted(x, y);
    match model {
        FitModel::ExpDecay | FitModel::ExpRecovery => exp_guess(model, &x, &y),
        FitModel::DampedSin => damped_sin_guess(&x, &y),
        FitModel::DoubleGaussian => double_gaussian_guess(&x, &y),
        FitModel::PowerLaw => power_law_guess(&x, &y),
        FitModel::Linear => match line_fit(&x, &y) {
            Some((c0, c1)) => Guess {
                params: vec![c0, c1],
                flagged: false,
            },
            None => Guess {
                params: vec![mean(&y), 0.0],
                flagged: true,
            },
        },
    }
}

fn exp_guess(model: FitModel, x: &[f64], y: &[f64]) -> Guess {
    let n = x.len();
    let span = (x[n - 1] - x[0]).max(f64::MIN_POSITIVE);
    let tail = (n / 10).max(1);
    let y0 = mean(&y[n - tail..]);
    let d0 = y[0] - y0;
    let (lo, hi) = min_max(y);
    let recovery = model == FitModel::ExpRecovery;
    if !(hi - lo > 1e-12 * (hi.abs() + lo.abs())) || d0 == 0.0 {
        let y_mean = mean(y);
        let a = if recovery { 1e-6 * y_mean.abs().max(1.0) } else { 0.0 };
        return Guess {
            params: vec![y_mean, a, span / 3.0],
            flagged: true,
        };
    }
    // first 1/e crossing of |y − y0|, measured from the first sample
    let target = d0.abs() / E;
    let mut t = span;
    for k in 1..n {
        let (a, b) = ((y[k - 1] - y0).abs(), (y[k] - y0).abs());
        if b <= target {
            let f = if a > b { (a - target) / (a - b) } else { 1.0 };
            t = x[k - 1] + f * (x[k] - x[k - 1]) - x[0];
            break;
        }
    }
    if !(t > 0.0) {
        t = span / 10.0;
    }
    let ones = vec![1.0; n];
    let decay: Vec<f64> = x.iter().map(|&xi| (-xi / t).exp()).collect();
    let (y0, amp) = match two_basis(&ones, &decay, y) {
        Some((c0, c1, _)) if c0.is_finite() && c1.is_finite() && c1 != 0.0 => (c0, c1),
        _ => (y0, d0 * (x[0] / t).min(700.0).exp()),
    };
    if recovery {
        let a = if amp < 0.0 { -amp } else { d0.abs().max(1e-12) };
        return Guess {
            params: vec![y0, a, t],
            flagged: amp >= 0.0,
        };
    }
    Guess {
        params: vec![y0, amp, t],
        flagged: false,
    }
}

fn median_step(x: &[f64]) -> f64 {
    let mut d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Frequency maximizing `|Σ y e^{−iωx}|` over a grid up to the Nyquist limit.
pub(crate) fn dominant_frequency(x: &[f64], y: &[f64]) -> Option<f64> {
    let span = x[x.len() - 1] - x[0];
    if !(span > 0.0) {
        return None;
    }
    let f_max = 0.5 / median_step(x);
    let df = 0.1 / span;
    let f_min = 0.5 / span;
    let steps = (((f_max - f_min) / df).ceil() as usize).clamp(1, 20_000);
    let mut best = (0.0, f_min);
    for k in 0..=steps {
        let f = f_min + k as f64 * (f_max - f_min) / steps as f64;
        let w = TAU * f;
        let (mut re, mut im) = (0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            re += yi * (w * xi).cos();
            im -= yi * (w * xi).sin();
        }
        let power = re * re + im * im;
        if power > best.0 {
            best = (power, f);
        }
    }
    (best.0 > 0.0).then_some(best.1)
}

fn damped_sin_guess(x: &[f64], y: &[f64]) -> Guess {
    let n = x.len();
    let span = (x[n - 1] - x[0]).max(f64::MIN_POSITIVE);
    let (lo, hi) = min_max(y);
    let fallback = Guess {
        params: vec![(hi - lo) / 2.0, span, span / 2.0, 0.0],
        flagged: true,
    };
    if !(hi - lo > 0.0) {
        return fallback;
    }
    let ym = mean(y);
    let centered: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let Some(f) = dominant_frequency(x, &centered) else {
        return fallback;
    };
    let w = TAU * f;
    // with ω fixed, A·e^{−x/T2}·sin(ω(x−τ0)) is linear in (A cos ωτ0, −A sin ωτ0)
    let mut best: Option<(f64, Vec<f64>)> = None;
    for scale in [0.25, 0.5, 1.0, 2.0, 4.0, 100.0] {
        let t2 = scale * span;
        let s: Vec<f64> = x.iter().map(|&xi| (-xi / t2).exp() * (w * xi).sin()).collect();
        let c: Vec<f64> = x.iter().map(|&xi| (-xi / t2).exp() * (w * xi).cos()).collect();
        if let Some((c1, c2, rss)) = two_basis(&s, &c, y) {
            let amp = c1.hypot(c2);
            let tau0 = (-c2).atan2(c1) / w;
            if amp.is_finite() && best.as_ref().is_none_or(|b| rss < b.0) {
                best = Some((rss, vec![amp, t2, 1.0 / f, tau0]));
            }
        }
    }
    match best {
        Some((_, mut p)) => {
            FitModel::DampedSin.canonicalize(&mut p);
            Guess {
                params: p,
                flagged: false,
            }
        }
        None => fallback,
    }
}

fn smooth5(y: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let a = i.saturating_sub(2);
            let b = (i + 3).min(y.len());
            mean(&y[a..b])
        })
        .collect()
}

/// Half width at half maximum around `peak`, averaged over the sides found.
fn hwhm(x: &[f64], y: &[f64], peak: usize, base: f64) -> Option<f64> {
    let half = base + (y[peak] - base) / 2.0;
    let right = (peak + 1..y.len()).find(|&i| y[i] < half).map(|i| x[i] - x[peak]);
    let left = (0..peak).rev().find(|&i| y[i] < half).map(|i| x[peak] - x[i]);
    match (left, right) {
        (Some(l), Some(r)) => Some(0.5 * (l + r)),
        (a, b) => a.or(b),
    }
}

fn double_gaussian_guess(x: &[f64], y: &[f64]) -> Guess {
    let n = x.len();
    let span = (x[n - 1] - x[0]).max(f64::MIN_POSITIVE);
    let (lo, hi) = min_max(y);
    let sm = smooth5(y);
    let mut maxima: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| sm[i] >= sm[i - 1] && sm[i] >= sm[i + 1] && sm[i] > lo)
        .collect();
    if maxima.is_empty() {
        maxima.push((0..n).max_by(|&a, &b| sm[a].total_cmp(&sm[b])).unwrap_or(0));
    }
    maxima.sort_by(|&a, &b| sm[b].total_cmp(&sm[a]));
    let first = maxima[0];
    let base = lo;
    let second = maxima[1..].iter().copied().find(|&j| {
        let (a, b) = (first.min(j), first.max(j));
        let valley = sm[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
        valley < sm[j] - 0.5 * (sm[j] - base)
    });
    let min_sigma = median_step(x);
    let sigma_at = |i: usize| {
        hwhm(x, &sm, i, base)
            .map(|h| (h / 1.177_410_022_515_475).max(min_sigma))
            .unwrap_or(span / 10.0)
    };
    let s1 = sigma_at(first);
    let (mu2, a2, s2, flagged) = match second {
        Some(j) => (x[j], sm[j] - base, sigma_at(j), false),
        None => (x[first] + 2.0 * s1, (sm[first] - base) / 2.0, s1, true),
    };
    let mut p = vec![base, sm[first] - base, x[first], s1, a2, mu2, s2];
    if !(hi > lo) {
        p[1] = 0.0;
        p[4] = 0.0;
    }
    FitModel::DoubleGaussian.canonicalize(&mut p);
    Guess {
        params: p,
        flagged: flagged || !(hi > lo),
    }
}

fn power_law_guess(x: &[f64], y: &[f64]) -> Guess {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(xi, _)| **xi > 0.0).map(|(a, b)| (*a, *b)).collect();
    let (lo, hi) = min_max(y);
    let range = hi - lo;
    if pts.len() < 2 || !(range > 0.0) {
        return Guess {
            params: vec![mean(y), range.max(1e-12), 0.0],
            flagged: true,
        };
    }
    let (px, py): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let lx: Vec<f64> = px.iter().map(|v| v.ln()).collect();
    let ones = vec![1.0; px.len()];
    // log-log line for several offsets below the minimum; keep the best in y space
    let mut candidates = vec![0.0];
    for f in [1e-3, 1e-2, 0.1, 0.3] {
        candidates.push(lo - f * range);
    }
    for f in [0.1, 0.5, 0.9] {
        candidates.push(lo - f * lo.abs());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for t0 in candidates {
        if !(t0 < lo) {
            continue;
        }
        let ly: Vec<f64> = py.iter().map(|v| (v - t0).ln()).collect();
        let Some((_, a)) = line_fit(&lx, &ly) else { continue };
        let xa: Vec<f64> = px.iter().map(|v| v.powf(a)).collect();
        if let Some((c0, b, rss)) = two_basis(&ones, &xa, &py) {
            if b > 0.0 && rss.is_finite() && best.as_ref().is_none_or(|bst| rss < bst.0) {
                best = Some((rss, vec![c0, b, a]));
            }
        }
    }
    match best {
        Some((_, p)) => Guess {
            params: p,
            flagged: false,
        },
        None => Guess {
            params: vec![lo - 0.1 * range, range, -1.0],
            flagged: true,
        },
    }
}
