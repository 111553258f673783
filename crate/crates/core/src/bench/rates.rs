//! Least-squares convergence rates on log-log data.

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptiveHistory;
use crate::error::{AfemError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateAxis {
    Elements,
    Dofs,
}

/// Slope `m` and intercept `c` of the least-squares line `log y = c + m log x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AfemError::InvalidParameter(format!("need at least two points, got {}", x.len().min(y.len()))));
    }
    if let Some(i) = (0..x.len()).find(|&i| !(x[i] > 0.0 && y[i] > 0.0)) {
        return Err(AfemError::InvalidParameter(format!("log-log fit needs positive data, point {i} is ({}, {})", x[i], y[i])));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AfemError::InvalidParameter("all abscissae coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let m = sxy / sxx;
    Ok((m, my - m * mx))
}

/// Rate `s` in `y ≈ C x^{−s}`, with `C`.
pub fn decay_rate(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let (m, c) = loglog_fit(x, y)?;
    Ok((-m, c.exp()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// `N − N_0`.
    pub n: f64,
    pub error: Option<f64>,
    pub eta: f64,
    pub osc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub axis: RateAxis,
    pub points: Vec<RatePoint>,
    /// Index of the first point used by the fits.
    pub fit_from: usize,
    pub error_rate: Option<f64>,
    pub error_prefactor: Option<f64>,
    pub eta_rate: f64,
    pub eta_prefactor: f64,
    /// Rate of `(error² + osc²)^{1/2}`.
    pub total_rate: Option<f64>,
    /// `η / error` per point.
    pub effectivity: Vec<f64>,
}

/// Fits over the last `⌈n/2⌉` points of a history, `n` counting the entries
/// with `N > N_0`. `errors` overrides the history's energy errors (for
/// reference-based errors).
pub fn rate_fit(history: &AdaptiveHistory, axis: RateAxis, errors: Option<&[f64]>) -> Result<RateReport> {
    let recs = &history.records;
    if let Some(e) = errors {
        if e.len() != recs.len() {
            return Err(AfemError::InvalidParameter(format!("{} errors for {} iterations", e.len(), recs.len())));
        }
    }
    let count = |r: &crate::adapt::IterationRecord| match axis {
        RateAxis::Elements => r.elements as f64,
        RateAxis::Dofs => r.dofs as f64,
    };
    let Some(first) = recs.first() else {
        return Err(AfemError::InvalidParameter("empty history".into()));
    };
    let n0 = count(first);
    let points: Vec<RatePoint> = recs
        .iter()
        .enumerate()
        .filter(|(_, r)| count(r) > n0)
        .map(|(i, r)| RatePoint {
            n: count(r) - n0,
            error: errors.map(|e| e[i]).or(r.energy_error),
            eta: r.eta,
            osc: r.osc,
        })
        .collect();
    if points.len() < 4 {
        return Err(AfemError::InvalidParameter(format!("rate fit needs at least 4 refined levels, got {}", points.len())));
    }
    let fit_from = points.len() / 2;
    let tail = &points[fit_from..];
    let x: Vec<f64> = tail.iter().map(|p| p.n).collect();
    let eta: Vec<f64> = tail.iter().map(|p| p.eta).collect();
    let (eta_rate, eta_prefactor) = decay_rate(&x, &eta)?;
    let (mut error_rate, mut error_prefactor, mut total_rate) = (None, None, None);
    if tail.iter().all(|p| p.error.is_some()) {
        let err: Vec<f64> = tail.iter().map(|p| p.error.unwrap_or_default()).collect();
        let (s, c) = decay_rate(&x, &err)?;
        error_rate = Some(s);
        error_prefactor = Some(c);
        let total: Vec<f64> = tail.iter().map(|p| p.error.unwrap_or_default().hypot(p.osc)).collect();
        total_rate = Some(decay_rate(&x, &total)?.0);
    }
    let effectivity = points.iter().filter_map(|p| p.error.map(|e| p.eta / e)).collect();
    Ok(RateReport {
        axis,
        points,
        fit_from,
        error_rate,
        error_prefactor,
        eta_rate,
        eta_prefactor,
        total_rate,
        effectivity,
    })
}
