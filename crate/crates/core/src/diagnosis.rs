//! U-Squared diagnosis: per-feature signed squared z-scores of anomalous
//! observations against reference statistics, accumulated over the set.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faac::ObservationMatrix;
use crate::scaling::AutoscaleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub feature_names: Vec<String>,
    /// One row per observation, one signed contribution per feature.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_observation: Vec<Vec<f64>>,
    pub accumulated: Vec<f64>,
    /// Feature names by decreasing |accumulated|, ties in column order.
    pub ranking: Vec<String>,
    pub reference_id: String,
    /// Reference features with zero variance; they contribute 0.
    pub zero_sigma_features: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

impl Sign {
    pub fn of(v: f64) -> Sign {
        if v > 0.0 {
            Sign::Positive
        } else if v < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub accumulated: f64,
    pub sign: Sign,
}

/// Signed squared deviation `z·|z|`.
#[inline]
pub fn signed_square(z: f64) -> f64 {
    z * z.abs()
}

/// U-Squared of `rows` (raw feature vectors in `feature_names` order)
/// against `reference`.
pub fn u_squared(
    feature_names: &[String],
    rows: &[&[f64]],
    reference: &AutoscaleParams,
    reference_id: &str,
) -> Result<DiagnosisReport> {
    reference.check_features(feature_names)?;
    if rows.is_empty() {
        return Err(Error::EmptySelection("no observations to diagnose".into()));
    }
    let p = feature_names.len();
    if let Some(bad) = rows.iter().position(|r| r.len() != p) {
        return Err(Error::FeatureMismatch(format!(
            "observation {bad} has {} values, expected {p}",
            rows[bad].len()
        )));
    }
    let per_observation: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, &x)| signed_square(reference.scale_value(j, x)))
                .collect()
        })
        .collect();
    let mut accumulated = vec![0.0; p];
    for row in &per_observation {
        for (a, v) in accumulated.iter_mut().zip(row) {
            *a += v;
        }
    }
    let ranking = rank_order(&accumulated)
        .into_iter()
        .map(|j| feature_names[j].clone())
        .collect();
    Ok(DiagnosisReport {
        feature_names: feature_names.to_vec(),
        per_observation,
        accumulated,
        ranking,
        reference_id: reference_id.to_string(),
        zero_sigma_features: reference.zero_sigma_features.clone(),
    })
}

/// U-Squared of selected windows of `matrix`.
pub fn u_squared_windows(
    matrix: &ObservationMatrix,
    windows: &[usize],
    reference: &AutoscaleParams,
    reference_id: &str,
) -> Result<DiagnosisReport> {
    if let Some(&bad) = windows.iter().find(|&&w| w >= matrix.n_windows()) {
        return Err(Error::InvalidInput(format!(
            "window index {bad} out of range ({} windows)",
            matrix.n_windows()
        )));
    }
    let rows: Vec<&[f64]> = windows.iter().map(|&w| matrix.row(w)).collect();
    u_squared(matrix.feature_names(), &rows, reference, reference_id)
}

fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    idx
}

pub fn rank_features(report: &DiagnosisReport, top_k: usize) -> Vec<RankedFeature> {
    rank_order(&report.accumulated)
        .into_iter()
        .take(top_k)
        .map(|j| RankedFeature {
            name: report.feature_names[j].clone(),
            accumulated: report.accumulated[j],
            sign: Sign::of(report.accumulated[j]),
        })
        .collect()
}

pub const BARS_HEADER: &str = "feature,accumulated";

pub fn write_bars<W: Write>(report: &DiagnosisReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{BARS_HEADER}")?;
    for (name, v) in report.feature_names.iter().zip(&report.accumulated) {
        writeln!(w, "{name},{v}")?;
    }
    Ok(())
}

/// Writes the bar-plot CSV in feature order.
pub fn export_bars(report: &DiagnosisReport, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_bars(report, &mut buf).expect("write to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_bars(path: &Path) -> Result<Vec<(String, f64)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != BARS_HEADER {
                return Err(Error::format(path, format!("unexpected header {line:?}")));
            }
            continue;
        }
        let (name, v) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::format(path, format!("line {}: missing comma", i + 1)))?;
        let v: f64 = v
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad number {v:?}", i + 1)))?;
        out.push((name.to_string(), v));
    }
    Ok(out)
}

impl DiagnosisReport {
    /// JSON form; `per_observation` is omitted unless requested.
    pub fn to_json(&self, include_per_observation: bool) -> String {
        if include_per_observation {
            serde_json::to_string_pretty(self).expect("report serializes")
        } else {
            let mut slim = self.clone();
            slim.per_observation.clear();
            serde_json::to_string_pretty(&slim).expect("report serializes")
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    fn reference(mu: Vec<f64>, sigma: Vec<f64>) -> AutoscaleParams {
        AutoscaleParams {
            feature_names: names(mu.len()),
            zero_sigma_features: sigma
                .iter()
                .enumerate()
                .filter(|(_, s)| **s == 0.0)
                .map(|(j, _)| format!("f{j}"))
                .collect(),
            mu,
            sigma,
        }
    }

    #[test]
    fn hand_examples() {
        let r = reference(vec![0.0, 0.0], vec![1.0, 1.0]);
        let rep = u_squared(&names(2), &[&[3.0, -2.0]], &r, "ref").unwrap();
        assert_eq!(rep.per_observation, vec![vec![9.0, -4.0]]);
        assert_eq!(rep.accumulated, vec![9.0, -4.0]);

        let rep = u_squared(&names(2), &[&[0.0, 0.0]], &r, "ref").unwrap();
        assert_eq!(rep.accumulated, vec![0.0, 0.0]);

        let r1 = reference(vec![5.0], vec![2.0]);
        let rep = u_squared(&names(1), &[&[7.0], &[3.0]], &r1, "ref").unwrap();
        assert_eq!(rep.accumulated, vec![0.0]);
    }

    #[test]
    fn ranking_examples() {
        let rep = DiagnosisReport {
            feature_names: names(3),
            per_observation: vec![],
            accumulated: vec![9.0, -16.0, 1.0],
            ranking: vec![],
            reference_id: String::new(),
            zero_sigma_features: vec![],
        };
        let top = rank_features(&rep, 2);
        assert_eq!(top[0].name, "f1");
        assert_eq!(top[0].sign, Sign::Negative);
        assert_eq!(top[1].name, "f0");
        let zero = DiagnosisReport {
            accumulated: vec![0.0; 3],
            ..rep
        };
        let order: Vec<String> = rank_features(&zero, 3)
            .into_iter()
            .map(|f| f.name)
            .collect();
        assert_eq!(order, names(3));
    }

    #[test]
    fn zero_sigma_contributes_nothing() {
        let r = reference(vec![1.0, 0.0], vec![0.0, 1.0]);
        let rep = u_squared(&names(2), &[&[100.0, 2.0]], &r, "ref").unwrap();
        assert_eq!(rep.accumulated, vec![0.0, 4.0]);
        assert_eq!(rep.zero_sigma_features, vec!["f0".to_string()]);
    }

    #[test]
    fn errors() {
        let r = reference(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(matches!(
            u_squared(&names(2), &[], &r, "x"),
            Err(Error::EmptySelection(_))
        ));
        assert!(matches!(
            u_squared(&names(3), &[&[1.0, 2.0, 3.0]], &r, "x"),
            Err(Error::FeatureMismatch(_))
        ));
    }

    #[test]
    fn bars_round_trip_and_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = 7;
        let r = reference(vec![0.3; p], vec![1.7; p]);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..p).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
        let rep = u_squared(&names(p), &refs, &r, "ref").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bars.csv");
        export_bars(&rep, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), p + 1);
        let back = read_bars(&path).unwrap();
        let vals: Vec<f64> = back.iter().map(|(_, v)| *v).collect();
        assert_eq!(vals, rep.accumulated);
        let mut resorted = back.clone();
        resorted.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
        let names_sorted: Vec<String> = resorted.into_iter().map(|(n, _)| n).collect();
        assert_eq!(names_sorted, rep.ranking);
    }

    proptest::proptest! {
        #[test]
        fn additivity(a in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 1..6),
                      b in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 1..6)) {
            let r = reference(vec![1.0, -2.0, 0.5], vec![2.0, 0.7, 3.1]);
            let ra: Vec<&[f64]> = a.iter().map(|v| v.as_slice()).collect();
            let rb: Vec<&[f64]> = b.iter().map(|v| v.as_slice()).collect();
            let all: Vec<&[f64]> = ra.iter().chain(&rb).copied().collect();
            let ua = u_squared(&names(3), &ra, &r, "r").unwrap();
            let ub = u_squared(&names(3), &rb, &r, "r").unwrap();
            let uu = u_squared(&names(3), &all, &r, "r").unwrap();
            for j in 0..3 {
                let s = ua.accumulated[j] + ub.accumulated[j];
                proptest::prop_assert!((uu.accumulated[j] - s).abs() <= 1e-9 * (1.0 + s.abs()));
            }
        }

        #[test]
        fn antisymmetry(x in proptest::collection::vec(-50.0f64..50.0, 3)) {
            let r = reference(vec![1.0, -2.0, 0.5], vec![2.0, 0.7, 3.1]);
            let refl: Vec<f64> = x.iter().zip(&r.mu).map(|(v, m)| 2.0 * m - v).collect();
            let u1 = u_squared(&names(3), &[&x], &r, "r").unwrap();
            let u2 = u_squared(&names(3), &[&refl], &r, "r").unwrap();
            for j in 0..3 {
                // Reflection is exact up to one rounding of 2μ − x.
                let z = (x[j] - r.mu[j]) / r.sigma[j];
                proptest::prop_assert!((u1.accumulated[j] + u2.accumulated[j]).abs() <= 1e-12 * (1.0 + z * z));
                proptest::prop_assert_eq!(u1.accumulated[j].abs(), z * z);
            }
        }

        #[test]
        fn rescaling_invariance(x in proptest::collection::vec(-50.0f64..50.0, 3), k in 0.01f64..100.0) {
            let r = reference(vec![1.0, -2.0, 0.5], vec![2.0, 0.7, 3.1]);
            let rk = reference(vec![1.0 * k, -2.0, 0.5], vec![2.0 * k, 0.7, 3.1]);
            let xk = vec![x[0] * k, x[1], x[2]];
            let u1 = u_squared(&names(3), &[&x], &r, "r").unwrap();
            let u2 = u_squared(&names(3), &[&xk], &rk, "r").unwrap();
            for j in 0..3 {
                proptest::prop_assert!((u1.accumulated[j] - u2.accumulated[j]).abs() <= 1e-10 * (1.0 + u1.accumulated[j].abs()));
            }
        }
    }
}
