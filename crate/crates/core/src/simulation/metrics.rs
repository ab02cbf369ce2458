use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linearly interpolated sample quantile of sorted data (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustSummary {
    pub robust_rmse: f64,
    pub median_bias: f64,
    pub iqr: f64,
    /// Finite estimates used.
    pub used: usize,
    /// Non-finite estimates dropped.
    pub excluded: usize,
}

/// `sqrt(median_bias² + (IQR/1.349)²)` over the finite estimates.
pub fn robust_rmse(estimates: &[f64], truth: f64) -> Result<RobustSummary> {
    let mut v: Vec<f64> = estimates.iter().copied().filter(|e| e.is_finite()).collect();
    let excluded = estimates.len() - v.len();
    if v.is_empty() {
        return Err(Error::AllFailed);
    }
    v.sort_by(f64::total_cmp);
    let median_bias = quantile_sorted(&v, 0.5) - truth;
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let spread = iqr / 1.349;
    Ok(RobustSummary {
        robust_rmse: (median_bias * median_bias + spread * spread).sqrt(),
        median_bias,
        iqr,
        used: v.len(),
        excluded,
    })
}
