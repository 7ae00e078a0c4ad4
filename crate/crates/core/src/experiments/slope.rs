//! Log-log slope fits with a truncation-floor filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows whose value moves less than this fraction from the previous δ are
/// treated as sitting on a lattice floor.
pub const SATURATION_THRESHOLD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Indices into the input slices that entered the fit.
    pub used_rows: Vec<usize>,
}

/// Indices of rows with a positive finite value that moved by at least
/// [`SATURATION_THRESHOLD`] relative to the preceding row.
pub fn pre_saturation_rows(deltas: &[f64], values: &[f64]) -> Vec<usize> {
    let mut used = Vec::new();
    for i in 0..deltas.len().min(values.len()) {
        let (d, v) = (deltas[i], values[i]);
        if !(d > 0.0 && v > 0.0 && d.is_finite() && v.is_finite()) {
            continue;
        }
        if i > 0 && values[i - 1] > 0.0 && (v / values[i - 1] - 1.0).abs() < SATURATION_THRESHOLD {
            continue;
        }
        used.push(i);
    }
    used
}

/// Ordinary least squares of `log value` against `log δ` over the
/// pre-saturation rows.
pub fn fit_loglog_slope(deltas: &[f64], values: &[f64]) -> Result<SlopeFit> {
    if deltas.len() != values.len() {
        return Err(Error::SizeMismatch {
            expected: deltas.len(),
            got: values.len(),
        });
    }
    let used_rows = pre_saturation_rows(deltas, values);
    if used_rows.len() < 3 {
        return Err(Error::InsufficientData(used_rows.len()));
    }
    let xs: Vec<f64> = used_rows.iter().map(|&i| deltas[i].ln()).collect();
    let ys: Vec<f64> = used_rows.iter().map(|&i| values[i].ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all δ values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        used_rows,
    })
}
