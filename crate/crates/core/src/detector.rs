//! Photon-counting histograms and the scalar metrics read off them.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinetics::Trajectory;

pub const DEFAULT_BIN_WIDTH_NS: f64 = 0.1;
pub const DEFAULT_STEADY_WINDOW_NS: (f64, f64) = (2000.0, 3000.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("invalid detector parameter `{name}` = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("window [{start}, {end}] ns lies outside the histogram range [{lo}, {hi}] ns")]
    Window { start: f64, end: f64, lo: f64, hi: f64 },
    #[error("reference level is zero; ratio undefined")]
    ZeroReference,
    #[error("histogram is already shot-noise sampled")]
    AlreadySampled,
}

fn perr(name: &'static str, value: f64, reason: &'static str) -> DetectorError {
    DetectorError::Parameter {
        name,
        value,
        reason,
    }
}

/// Time-binned photon counts, either expectation values or Poisson samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcspcHistogram {
    /// `counts.len() + 1` bin boundaries, ns.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub shots: u64,
    /// Seed used for shot-noise sampling; `None` in expected-value mode.
    pub seed: Option<u64>,
}

impl TcspcHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn is_sampled(&self) -> bool {
        self.seed.is_some()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn range(&self) -> (f64, f64) {
        (
            self.bin_edges.first().copied().unwrap_or(0.0),
            self.bin_edges.last().copied().unwrap_or(0.0),
        )
    }

    /// Multiply every bin by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            counts: self.counts.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_start_ns,counts")?;
        for (t, c) in self.bin_edges.iter().zip(&self.counts) {
            writeln!(w, "{t},{c}")?;
        }
        Ok(())
    }
}

/// Per-point seed for parallel sweeps.
pub fn derive_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

/// Linear interpolation of the PL trace at `t` (clamped to the trace).
fn pl_at(times: &[f64], pl: &[f64], t: f64) -> f64 {
    let i = times.partition_point(|&x| x <= t);
    if i == 0 {
        return pl[0];
    }
    if i >= times.len() {
        return pl[pl.len() - 1];
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let f = (t - t0) / (t1 - t0);
    pl[i - 1] + f * (pl[i] - pl[i - 1])
}

/// Trapezoidal integral of the PL trace over `[a, b]`.
fn integrate_pl(times: &[f64], pl: &[f64], a: f64, b: f64) -> f64 {
    let lo = times.partition_point(|&x| x <= a);
    let hi = times.partition_point(|&x| x < b);
    let mut prev = (a, pl_at(times, pl, a));
    let mut sum = 0.0;
    for i in lo..hi {
        sum += 0.5 * (prev.1 + pl[i]) * (times[i] - prev.0);
        prev = (times[i], pl[i]);
    }
    sum + 0.5 * (prev.1 + pl_at(times, pl, b)) * (b - prev.0)
}

/// Expected histogram: `shots · efficiency · ∫ pl dt` per bin.
///
/// Bins start at the first trajectory sample; a trailing partial bin is dropped.
pub fn expected_counts(
    traj: &Trajectory,
    bin_width: f64,
    shots: u64,
    efficiency: f64,
) -> Result<TcspcHistogram, DetectorError> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(perr("bin_width", bin_width, "must be > 0"));
    }
    if shots == 0 {
        return Err(perr("shots", 0.0, "must be >= 1"));
    }
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(perr("efficiency", efficiency, "must lie in (0, 1]"));
    }
    if traj.len() < 2 {
        return Err(perr("trajectory", traj.len() as f64, "needs at least two samples"));
    }
    if bin_width < traj.min_step() * (1.0 - 1e-9) {
        return Err(perr("bin_width", bin_width, "finer than the trajectory sampling step"));
    }
    let t0 = traj.times[0];
    let span = traj.times[traj.len() - 1] - t0;
    let n = (span / bin_width + 1e-9).floor() as usize;
    let scale = shots as f64 * efficiency;
    let bin_edges: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * bin_width).collect();
    let counts = bin_edges
        .windows(2)
        .map(|w| scale * integrate_pl(&traj.times, &traj.pl, w[0], w[1]).max(0.0))
        .collect();
    Ok(TcspcHistogram {
        bin_edges,
        counts,
        shots,
        seed: None,
    })
}

/// Poisson draw per bin with the expected value as mean.
pub fn sample_counts(expected: &TcspcHistogram, seed: u64) -> Result<TcspcHistogram, DetectorError> {
    if expected.is_sampled() {
        return Err(DetectorError::AlreadySampled);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = expected
        .counts
        .iter()
        .map(|&lambda| {
            if lambda > 0.0 {
                // Poisson::new only fails for non-positive or non-finite means
                Poisson::new(lambda).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(TcspcHistogram {
        counts,
        seed: Some(seed),
        ..expected.clone()
    })
}

/// Counts in `[t_start, t_end]`; partially covered bins contribute linearly.
pub fn integrate_window(hist: &TcspcHistogram, t_start: f64, t_end: f64) -> Result<f64, DetectorError> {
    let (lo, hi) = hist.range();
    let tol = 1e-9 * (hi - lo).abs().max(1.0);
    if !(t_start <= t_end) || t_start < lo - tol || t_end > hi + tol {
        return Err(DetectorError::Window {
            start: t_start,
            end: t_end,
            lo,
            hi,
        });
    }
    let mut sum = 0.0;
    for (i, &c) in hist.counts.iter().enumerate() {
        let (a, b) = (hist.bin_edges[i], hist.bin_edges[i + 1]);
        let overlap = b.min(t_end) - a.max(t_start);
        if overlap > 0.0 {
            sum += c * overlap / (b - a);
        }
    }
    Ok(sum)
}

/// Relative change of `signal` against `reference`.
pub fn contrast(signal: f64, reference: f64) -> Result<f64, DetectorError> {
    if reference == 0.0 || !reference.is_finite() {
        return Err(DetectorError::ZeroReference);
    }
    Ok((signal - reference) / reference)
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Three-point running median; the end bins are kept as they are.
pub fn median_filter3(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in 1..x.len().saturating_sub(1) {
        out[i] = median3(x[i - 1], x[i], x[i + 1]);
    }
    out
}

/// Peak bin value over the steady-state mean bin value.
pub fn overshoot_ratio(
    hist: &TcspcHistogram,
    steady_window: (f64, f64),
    median_filter: bool,
) -> Result<f64, DetectorError> {
    let (a, b) = steady_window;
    if !(b > a) {
        return Err(DetectorError::Window {
            start: a,
            end: b,
            lo: hist.range().0,
            hi: hist.range().1,
        });
    }
    let width = hist.bin_edges.get(1).map_or(0.0, |e| e - hist.bin_edges[0]);
    let mean = integrate_window(hist, a, b)? / ((b - a) / width);
    if !(mean > 0.0) {
        return Err(DetectorError::ZeroReference);
    }
    let peak = if median_filter {
        median_filter3(&hist.counts).into_iter().fold(f64::NEG_INFINITY, f64::max)
    } else {
        hist.counts.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(peak / mean)
}
