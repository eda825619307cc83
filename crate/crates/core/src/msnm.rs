//! Multivariate Statistical Network Monitoring: a PCA model of autoscaled
//! calibration traffic with the D (Hotelling-type) and Q (squared residual)
//! statistics, percentile control limits and a combined score
//! `D / UCL_D + Q / UCL_Q`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faac::ObservationMatrix;
use crate::scaling::AutoscaleParams;
use crate::stats;

pub const MSNM_FORMAT_VERSION: u32 = 1;

/// Eigenvalues below this fraction of the largest are treated as zero.
const EIGEN_RANK_TOL: f64 = 1e-10;
/// Lower bound on control limits, so that a limit computed from an exact
/// (zero-residual) fit still yields a finite score.
const UCL_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentRule {
    Fixed(usize),
    /// Smallest number of components whose eigenvalues explain at least this
    /// fraction of the total variance.
    VarianceFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsnmParams {
    pub components: ComponentRule,
    /// Percentile (0–100] of calibration statistics used as control limits.
    pub limit_percentile: f64,
}

impl Default for MsnmParams {
    fn default() -> Self {
        MsnmParams {
            components: ComponentRule::VarianceFraction(0.95),
            limit_percentile: 99.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsnmModel {
    pub format_version: u32,
    pub scaling: AutoscaleParams,
    /// features × n_components, row-major; columns are orthonormal.
    pub loadings: Vec<f64>,
    /// Score variances, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub n_components: usize,
    pub ucl_d: f64,
    pub ucl_q: f64,
    pub calibration_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsnmScore {
    pub d_stat: f64,
    pub q_stat: f64,
    pub score: f64,
}

pub fn fit_msnm(calibration: &ObservationMatrix, params: &MsnmParams) -> Result<MsnmModel> {
    let n = calibration.n_windows();
    let p = calibration.n_features();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "MSNM calibration needs at least 3 observations, got {n}"
        )));
    }
    if !(params.limit_percentile > 0.0 && params.limit_percentile <= 100.0) {
        return Err(Error::Config(format!(
            "limit percentile must lie in (0, 100], got {}",
            params.limit_percentile
        )));
    }
    let scaling = AutoscaleParams::fit(calibration)?;
    let informative = p - scaling.zero_sigma_features.len();
    if informative < 2 {
        return Err(Error::Numerical(format!(
            "degenerate covariance: only {informative} non-constant feature(s)"
        )));
    }

    let z = DMatrix::from_fn(n, p, |i, j| scaling.scale_value(j, calibration.get(i, j)));
    let cov = (z.transpose() * &z) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let lambda_max = eig.eigenvalues[order[0]];
    if !(lambda_max > 0.0) {
        return Err(Error::Numerical(
            "degenerate covariance: no positive eigenvalue".into(),
        ));
    }
    let n_positive = order
        .iter()
        .take_while(|&&k| eig.eigenvalues[k] > EIGEN_RANK_TOL * lambda_max)
        .count();
    let max_a = n_positive.min(p).min(n - 1);

    let a = match params.components {
        ComponentRule::Fixed(a) => {
            if a == 0 || a > p.min(n - 1) {
                return Err(Error::Config(format!(
                    "component count {a} outside 1..={}",
                    p.min(n - 1)
                )));
            }
            if a > max_a {
                return Err(Error::Numerical(format!(
                    "requested {a} components but covariance rank is {max_a}"
                )));
            }
            a
        }
        ComponentRule::VarianceFraction(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::Config(format!(
                    "variance fraction must lie in (0, 1], got {tau}"
                )));
            }
            let total: f64 = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).sum();
            let mut cum = 0.0;
            let mut chosen = max_a;
            for (i, &k) in order.iter().enumerate().take(max_a) {
                cum += eig.eigenvalues[k].max(0.0);
                if cum >= tau * total * (1.0 - 1e-12) {
                    chosen = i + 1;
                    break;
                }
            }
            chosen
        }
    };

    let mut loadings = vec![0.0; p * a];
    let mut eigenvalues = Vec::with_capacity(a);
    for (c, &k) in order.iter().take(a).enumerate() {
        let v = eig.eigenvectors.column(k);
        // Sign convention: the largest-magnitude entry is positive.
        let mut pivot = 0;
        for j in 1..p {
            if v[j].abs() > v[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..p {
            loadings[j * a + c] = sign * v[j];
        }
        eigenvalues.push(eig.eigenvalues[k]);
    }

    let mut model = MsnmModel {
        format_version: MSNM_FORMAT_VERSION,
        scaling,
        loadings,
        eigenvalues,
        n_components: a,
        ucl_d: 1.0,
        ucl_q: 1.0,
        calibration_size: n,
    };

    let (mut d, mut q): (Vec<f64>, Vec<f64>) =
        (0..n).map(|i| model.statistics(calibration.row(i))).unzip();
    d.sort_by(f64::total_cmp);
    q.sort_by(f64::total_cmp);
    let frac = params.limit_percentile / 100.0;
    model.ucl_d = stats::quantile_sorted(&d, frac).max(UCL_FLOOR);
    model.ucl_q = stats::quantile_sorted(&q, frac).max(UCL_FLOOR);
    Ok(model)
}

impl MsnmModel {
    pub fn feature_names(&self) -> &[String] {
        &self.scaling.feature_names
    }

    pub fn loading(&self, feature: usize, component: usize) -> f64 {
        self.loadings[feature * self.n_components + component]
    }

    /// `(D, Q)` for one raw observation.
    pub fn statistics(&self, row: &[f64]) -> (f64, f64) {
        let a = self.n_components;
        let z = self.scaling.scale_row(row);
        let mut t = vec![0.0; a];
        for (j, zj) in z.iter().enumerate() {
            let lrow = &self.loadings[j * a..(j + 1) * a];
            for c in 0..a {
                t[c] += zj * lrow[c];
            }
        }
        let d: f64 = t
            .iter()
            .zip(&self.eigenvalues)
            .map(|(tc, l)| tc * tc / l)
            .sum();
        let mut q = 0.0;
        for (j, zj) in z.iter().enumerate() {
            let lrow = &self.loadings[j * a..(j + 1) * a];
            let recon: f64 = lrow.iter().zip(&t).map(|(l, tc)| l * tc).sum();
            let r = zj - recon;
            q += r * r;
        }
        (d, q)
    }

    pub fn score_row(&self, row: &[f64]) -> MsnmScore {
        let (d_stat, q_stat) = self.statistics(row);
        MsnmScore {
            d_stat,
            q_stat,
            score: combine(d_stat, q_stat, self.ucl_d, self.ucl_q),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MsnmModel =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("MSNM model: {e}")))?;
        if m.format_version != MSNM_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported MSNM model version {}",
                m.format_version
            )));
        }
        if m.loadings.len() != m.scaling.n_features() * m.n_components
            || m.eigenvalues.len() != m.n_components
        {
            return Err(Error::Config(
                "MSNM model dimensions are inconsistent".into(),
            ));
        }
        Ok(m)
    }
}

/// Combined score; non-decreasing in both statistics.
pub fn combine(d_stat: f64, q_stat: f64, ucl_d: f64, ucl_q: f64) -> f64 {
    d_stat / ucl_d + q_stat / ucl_q
}

pub fn score_msnm(model: &MsnmModel, matrix: &ObservationMatrix) -> Result<Vec<MsnmScore>> {
    model.scaling.check_features(matrix.feature_names())?;
    Ok((0..matrix.n_windows())
        .into_par_iter()
        .map(|i| model.score_row(matrix.row(i)))
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::faac::WindowLabel;
    use crate::time::Timestamp;

    pub(crate) fn matrix(rows: &[Vec<f64>]) -> ObservationMatrix {
        let p = rows[0].len();
        ObservationMatrix::new(
            60,
            (0..rows.len()).map(|i| Timestamp(60 * i as i64)).collect(),
            (0..p).map(|j| format!("f{j}")).collect(),
            rows.concat(),
            vec![WindowLabel::normal(); rows.len()],
        )
        .unwrap()
    }

    fn random_rows(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Correlated columns with distinct variances.
        (0..n)
            .map(|_| {
                let base: f64 = rng.random_range(-1.0..1.0);
                (0..p)
                    .map(|j| {
                        base * (j as f64 + 1.0)
                            + rng.random_range(-1.0..1.0) * (0.3 + j as f64 * 0.2)
                    })
                    .collect()
            })
            .collect()
    }

    /// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
    /// (eigenvalues, eigenvectors as columns of a row-major p×p matrix).
    fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = a.len();
        let mut v = vec![vec![0.0; p]; p];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _sweep in 0..100 {
            let off: f64 = (0..p)
                .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-26 {
                break;
            }
            for k in 0..p {
                for l in k + 1..p {
                    if a[k][l].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[l][l] - a[k][k]) / (2.0 * a[k][l]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for i in 0..p {
                        let (aik, ail) = (a[i][k], a[i][l]);
                        a[i][k] = c * aik - s * ail;
                        a[i][l] = s * aik + c * ail;
                    }
                    for i in 0..p {
                        let (aki, ali) = (a[k][i], a[l][i]);
                        a[k][i] = c * aki - s * ali;
                        a[l][i] = s * aki + c * ali;
                    }
                    for row in v.iter_mut() {
                        let (vk, vl) = (row[k], row[l]);
                        row[k] = c * vk - s * vl;
                        row[l] = s * vk + c * vl;
                    }
                }
            }
        }
        ((0..p).map(|i| a[i][i]).collect(), v)
    }

    #[test]
    fn rank_one_data_needs_one_component() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let s = i as f64 - 7.5;
                vec![2.0 * s + 1.0, -s + 3.0, 0.5 * s]
            })
            .collect();
        let model = fit_msnm(&matrix(&rows), &MsnmParams::default()).unwrap();
        assert_eq!(model.n_components, 1);
        for r in &rows {
            assert!(model.statistics(r).1 <= 1e-8);
        }
    }

    #[test]
    fn full_rank_leaves_no_residual() {
        let rows = random_rows(3, 40, 5);
        let params = MsnmParams {
            components: ComponentRule::Fixed(5),
            ..Default::default()
        };
        let model = fit_msnm(&matrix(&rows), &params).unwrap();
        for r in &rows {
            assert!(model.statistics(r).1 <= 1e-8);
        }
    }

    #[test]
    fn full_basis_reconstructs_identity() {
        let rows = random_rows(5, 100, 6);
        let params = MsnmParams {
            components: ComponentRule::Fixed(6),
            ..Default::default()
        };
        let model = fit_msnm(&matrix(&rows), &params).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let ppt: f64 = (0..6)
                    .map(|c| model.loading(i, c) * model.loading(j, c))
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ppt - expect).abs() < 1e-8);
            }
        }
        // Applied to scaled data the projection is the identity.
        for r in &rows {
            let z = model.scaling.scale_row(r);
            for j in 0..6 {
                let t: Vec<f64> = (0..6)
                    .map(|c| (0..6).map(|k| z[k] * model.loading(k, c)).sum())
                    .collect();
                let back: f64 = (0..6).map(|c| model.loading(j, c) * t[c]).sum();
                assert!((back - z[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn loadings_are_orthonormal_and_sorted() {
        let rows = random_rows(9, 60, 8);
        let model = fit_msnm(&matrix(&rows), &MsnmParams::default()).unwrap();
        let a = model.n_components;
        for c1 in 0..a {
            for c2 in 0..a {
                let dot: f64 = (0..8)
                    .map(|j| model.loading(j, c1) * model.loading(j, c2))
                    .sum();
                assert!((dot - if c1 == c2 { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for c in 0..a {
            let col: Vec<f64> = (0..8).map(|j| model.loading(j, c)).collect();
            let max = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn mean_row_scores_zero() {
        let rows = random_rows(1, 30, 4);
        let model = fit_msnm(&matrix(&rows), &MsnmParams::default()).unwrap();
        let s = model.score_row(&model.scaling.mu.clone());
        assert!(s.d_stat.abs() < 1e-20 && s.q_stat.abs() < 1e-20 && s.score.abs() < 1e-20);
    }

    #[test]
    fn point_at_two_sigma_on_component() {
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|i| {
                let s = (i as f64 * 0.37).sin() * 3.0;
                vec![s + 10.0, 2.0 * s - 1.0, -s]
            })
            .collect();
        let model = fit_msnm(&matrix(&rows), &MsnmParams::default()).unwrap();
        assert_eq!(model.n_components, 1);
        let t = 2.0 * model.eigenvalues[0].sqrt();
        let raw: Vec<f64> = (0..3)
            .map(|j| model.scaling.mu[j] + model.scaling.sigma[j] * t * model.loading(j, 0))
            .collect();
        let (d, q) = model.statistics(&raw);
        assert!((d - 4.0).abs() < 1e-9, "{d}");
        assert!(q.abs() < 1e-9);
    }

    #[test]
    fn statistics_match_independent_eigenbasis() {
        for seed in 0..5 {
            let rows = random_rows(100 + seed, 30, 5);
            let params = MsnmParams {
                components: ComponentRule::Fixed(3),
                ..Default::default()
            };
            let model = fit_msnm(&matrix(&rows), &params).unwrap();

            // Oracle: two-pass scaling, dense covariance, Jacobi rotation.
            let n = rows.len();
            let p = 5;
            let mu: Vec<f64> = (0..p)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
                .collect();
            let sd: Vec<f64> = (0..p)
                .map(|j| {
                    (rows.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / (n - 1) as f64)
                        .sqrt()
                })
                .collect();
            let z: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| (0..p).map(|j| (r[j] - mu[j]) / sd[j]).collect())
                .collect();
            let cov: Vec<Vec<f64>> = (0..p)
                .map(|a| {
                    (0..p)
                        .map(|b| z.iter().map(|r| r[a] * r[b]).sum::<f64>() / (n - 1) as f64)
                        .collect()
                })
                .collect();
            let (vals, vecs) = jacobi_eigen(cov);
            let mut idx: Vec<usize> = (0..p).collect();
            idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..10 {
                let x: Vec<f64> = (0..p)
                    .map(|j| mu[j] + rng.random_range(-3.0..3.0) * sd[j])
                    .collect();
                let zx: Vec<f64> = (0..p).map(|j| (x[j] - mu[j]) / sd[j]).collect();
                let mut d = 0.0;
                let mut recon = vec![0.0; p];
                for &k in idx.iter().take(3) {
                    let t: f64 = (0..p).map(|j| zx[j] * vecs[j][k]).sum();
                    d += t * t / vals[k];
                    for j in 0..p {
                        recon[j] += t * vecs[j][k];
                    }
                }
                let q: f64 = (0..p).map(|j| (zx[j] - recon[j]).powi(2)).sum();
                let (md, mq) = model.statistics(&x);
                assert!((md - d).abs() < 1e-8, "D {md} vs {d}");
                assert!((mq - q).abs() < 1e-8, "Q {mq} vs {q}");
            }
        }
    }

    #[test]
    fn mean_calibration_d_equals_components() {
        let rows = random_rows(21, 300, 6);
        let model = fit_msnm(&matrix(&rows), &MsnmParams::default()).unwrap();
        let a = model.n_components as f64;
        let n = rows.len() as f64;
        let mean_d = rows.iter().map(|r| model.statistics(r).0).sum::<f64>() / n;
        assert!((mean_d - a * (n - 1.0) / n).abs() < 1e-9);
        assert!((mean_d - a).abs() <= 0.05 * a);
    }

    #[test]
    fn invariances() {
        let rows = random_rows(33, 80, 5);
        let test = random_rows(34, 20, 5);
        let params = MsnmParams::default();
        let base = score_msnm(&fit_msnm(&matrix(&rows), &params).unwrap(), &matrix(&test)).unwrap();

        let scale = |rs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rs.iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .map(|(j, v)| if j == 2 { v * 37.5 } else { *v })
                        .collect()
                })
                .collect()
        };
        let scaled = score_msnm(
            &fit_msnm(&matrix(&scale(&rows)), &params).unwrap(),
            &matrix(&scale(&test)),
        )
        .unwrap();
        let perm = |rs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rs.iter()
                .map(|r| vec![r[3], r[0], r[4], r[2], r[1]])
                .collect()
        };
        let permuted = score_msnm(
            &fit_msnm(&matrix(&perm(&rows)), &params).unwrap(),
            &matrix(&perm(&test)),
        )
        .unwrap();
        for i in 0..test.len() {
            assert!((base[i].d_stat - scaled[i].d_stat).abs() < 1e-8);
            assert!((base[i].q_stat - scaled[i].q_stat).abs() < 1e-8);
            assert!((base[i].score - scaled[i].score).abs() < 1e-8);
            assert!((base[i].score - permuted[i].score).abs() < 1e-10);
        }
    }

    #[test]
    fn persistence_round_trip() {
        let rows = random_rows(8, 50, 4);
        let model = fit_msnm(&matrix(&rows), &MsnmParams::default()).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back = MsnmModel::from_json(&text).unwrap();
        for r in &rows {
            assert!((model.score_row(r).score - back.score_row(r).score).abs() <= 1e-12);
        }
    }

    #[test]
    fn error_paths() {
        assert!(fit_msnm(
            &matrix(&[vec![1.0, 2.0], vec![2.0, 3.0]]),
            &MsnmParams::default()
        )
        .is_err());
        let constant = vec![vec![1.0, 2.0, 3.0]; 10];
        assert!(matches!(
            fit_msnm(&matrix(&constant), &MsnmParams::default()),
            Err(Error::Numerical(_))
        ));
        let rows = random_rows(2, 20, 3);
        let model = fit_msnm(&matrix(&rows), &MsnmParams::default()).unwrap();
        let other = random_rows(2, 5, 4);
        assert!(matches!(
            score_msnm(&model, &matrix(&other)),
            Err(Error::FeatureMismatch(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn score_is_monotone(d in 0.0f64..100.0, q in 0.0f64..100.0, dd in 0.0f64..10.0, dq in 0.0f64..10.0,
                             ud in 0.1f64..10.0, uq in 0.1f64..10.0) {
            let base = combine(d, q, ud, uq);
            proptest::prop_assert!(combine(d + dd, q, ud, uq) >= base);
            proptest::prop_assert!(combine(d, q + dq, ud, uq) >= base);
        }
    }
}
