use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Five-number summary with Tukey whiskers (1.5·IQR) and linear-interpolation
/// quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "boxplot needs at least one value".into(),
        ));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("boxplot values contain NaN".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = stats::quantile_sorted(&s, 0.25);
    let median = stats::quantile_sorted(&s, 0.5);
    let q3 = stats::quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s
        .iter()
        .copied()
        .filter(|v| *v >= lo_fence && *v <= hi_fence)
        .collect();
    let outliers = s
        .iter()
        .copied()
        .filter(|v| *v < lo_fence || *v > hi_fence)
        .collect();
    Ok(BoxplotStats {
        q1,
        median,
        q3,
        // Quartiles always lie inside the fences, so `inside` is non-empty.
        whisker_low: inside[0],
        whisker_high: *inside.last().unwrap(),
        outliers,
    })
}
