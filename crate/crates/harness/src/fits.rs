//! Power-law and linear fits on time series.

use landau_core::inequalities::linear_fit;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitDeclined {
    #[error("series is empty or has nonpositive values")]
    NotPositive,
    #[error("series is not nonincreasing at t = {0}")]
    NotMonotone(f64),
    #[error("only {got} points in the window, need {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("no time with M(t) >= 2 M(t_end)")]
    NoDecay,
}

/// Log-log fit of a decaying functional on its early-time window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
    /// `sup_{t >= t_hi} M(t) / M(t_hi)`; at most one when the long-time
    /// branch stays on its plateau.
    pub plateau_ratio: f64,
}

/// Fits `log M` against `log t` on `[t_hi / 10, t_hi]`, where `t_hi` is the
/// last time with `M >= 2 M(t_end)`. Declines when `M` increases anywhere
/// (beyond a relative `1e-9`), since the decay law would not apply.
pub fn fit_appearance_rate(times: &[f64], values: &[f64], min_points: usize) -> Result<RateFit, FitDeclined> {
    let pts: Vec<(f64, f64)> = times.iter().zip(values).filter(|(t, _)| **t > 0.0).map(|(t, m)| (*t, *m)).collect();
    if pts.is_empty() || pts.iter().any(|(_, m)| !(*m > 0.0)) {
        return Err(FitDeclined::NotPositive);
    }
    for w in pts.windows(2) {
        if w[1].1 > w[0].1 * (1.0 + 1e-9) {
            return Err(FitDeclined::NotMonotone(w[1].0));
        }
    }
    let end = pts[pts.len() - 1].1;
    let t_hi = pts.iter().rev().find(|(_, m)| *m >= 2.0 * end).map(|p| p.0).ok_or(FitDeclined::NoDecay)?;
    let t_lo = 0.1 * t_hi;
    let window: Vec<&(f64, f64)> = pts.iter().filter(|(t, _)| *t >= t_lo && *t <= t_hi).collect();
    if window.len() < min_points {
        return Err(FitDeclined::TooFewPoints { got: window.len(), need: min_points });
    }
    let x: Vec<f64> = window.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = window.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = linear_fit(&x, &y);
    let at_hi = window[window.len() - 1].1;
    let late = pts.iter().filter(|(t, _)| *t >= t_hi).map(|p| p.1).fold(0.0, f64::max);
    Ok(RateFit { slope, intercept, t_lo, t_hi, points: window.len(), plateau_ratio: late / at_hi })
}

/// Least-squares line through a moment history and its worst excess.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub slope: f64,
    pub intercept: f64,
    /// `max_t (m(t) - fit(t)) / |fit(t)|`
    pub max_excess: f64,
    pub within_envelope: bool,
}

pub fn fit_moment_growth(times: &[f64], values: &[f64], envelope: f64) -> GrowthFit {
    let (slope, intercept) = linear_fit(times, values);
    let max_excess = times
        .iter()
        .zip(values)
        .map(|(t, m)| {
            let fit = intercept + slope * t;
            (m - fit) / fit.abs()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    GrowthFit { slope, intercept, max_excess, within_envelope: max_excess <= envelope }
}

/// Exponent of `y ~ x^a` by least squares in log-log.
pub fn power_law_exponent(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// `|measured - target| <= tol |target|`
pub fn within_relative(measured: f64, target: f64, tol: f64) -> bool {
    (measured - target).abs() <= tol * target.abs()
}
