//! Autoscaling (per-feature centring and unit-variance scaling) fitted on a
//! reference set of observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faac::ObservationMatrix;

/// Relative threshold below which a standard deviation counts as zero.
const ZERO_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoscaleParams {
    pub feature_names: Vec<String>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Features whose reference variance is zero; their scaled value is 0.
    pub zero_sigma_features: Vec<String>,
}

impl AutoscaleParams {
    /// Column means and sample standard deviations (divisor `n - 1`).
    pub fn fit(calibration: &ObservationMatrix) -> Result<Self> {
        Self::fit_rows(
            calibration.feature_names(),
            (0..calibration.n_windows()).map(|i| calibration.row(i)),
        )
    }

    pub fn fit_rows<'a>(
        feature_names: &[String],
        rows: impl Iterator<Item = &'a [f64]> + Clone,
    ) -> Result<Self> {
        let p = feature_names.len();
        let n = rows.clone().count();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "autoscaling needs at least 2 observations, got {n}"
            )));
        }
        let mut mu = vec![0.0; p];
        for row in rows.clone() {
            for (m, v) in mu.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mu {
            *m /= n as f64;
        }
        let mut var = vec![0.0; p];
        for row in rows {
            for j in 0..p {
                let d = row[j] - mu[j];
                var[j] += d * d;
            }
        }
        let mut sigma = Vec::with_capacity(p);
        let mut zero = Vec::new();
        for j in 0..p {
            let s = (var[j] / (n - 1) as f64).sqrt();
            if s <= ZERO_SIGMA * mu[j].abs().max(1.0) {
                sigma.push(0.0);
                zero.push(feature_names[j].clone());
            } else {
                sigma.push(s);
            }
        }
        Ok(AutoscaleParams {
            feature_names: feature_names.to_vec(),
            mu,
            sigma,
            zero_sigma_features: zero,
        })
    }

    pub fn n_features(&self) -> usize {
        self.mu.len()
    }

    /// Scaled value of feature `j`; zero-variance features map to 0.
    #[inline]
    pub fn scale_value(&self, j: usize, x: f64) -> f64 {
        if self.sigma[j] > 0.0 {
            (x - self.mu[j]) / self.sigma[j]
        } else {
            0.0
        }
    }

    pub fn scale_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| self.scale_value(j, x))
            .collect()
    }

    /// Checks that `names` lists the same features in the same order.
    pub fn check_features(&self, names: &[String]) -> Result<()> {
        if names == self.feature_names.as_slice() {
            return Ok(());
        }
        let first = self
            .feature_names
            .iter()
            .zip(names)
            .position(|(a, b)| a != b)
            .unwrap_or(self.feature_names.len().min(names.len()));
        Err(Error::FeatureMismatch(format!(
            "expected {} features, got {}; first difference at column {first} ({:?} vs {:?})",
            self.feature_names.len(),
            names.len(),
            self.feature_names.get(first),
            names.get(first)
        )))
    }
}
