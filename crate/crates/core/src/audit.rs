//! Background-label audit: flag high-scoring NORMAL windows, group them into
//! periods and diagnose each period against the rest of the background.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnosis::{rank_features, u_squared_windows, DiagnosisReport, RankedFeature};
use crate::error::{Error, Result};
use crate::evaluation::{welch_ttest, Alternative, TTestResult};
use crate::faac::{ObservationMatrix, WindowLabel};
use crate::scaling::AutoscaleParams;
use crate::stats;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Percentile (0–100] of all background scores.
    Percentile(f64),
    Absolute(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Percentile(99.9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditParams {
    pub threshold: ThresholdRule,
    /// Largest index gap between flagged windows of one period.
    pub max_gap: usize,
    pub top_k: usize,
}

impl Default for AuditParams {
    fn default() -> Self {
        AuditParams {
            threshold: ThresholdRule::default(),
            max_gap: 1,
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTest {
    pub feature: String,
    pub accumulated: f64,
    /// One-sided test that the period mean exceeds the other background;
    /// absent for single-window periods.
    pub test: Option<TTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousPeriod {
    pub window_ids: Vec<usize>,
    pub window_starts: Vec<Timestamp>,
    pub peak_score: f64,
    pub diagnosis: DiagnosisReport,
    pub feature_tests: Vec<FeatureTest>,
}

impl SuspiciousPeriod {
    pub fn top_features(&self) -> Vec<&str> {
        self.feature_tests
            .iter()
            .map(|f| f.feature.as_str())
            .collect()
    }
}

/// Resolves a threshold rule against the background scores.
pub fn background_threshold(
    scores: &[f64],
    labels: &[WindowLabel],
    rule: ThresholdRule,
) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let background: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_normal())
        .map(|(s, _)| *s)
        .collect();
    if background.is_empty() {
        return Err(Error::InvalidInput("no background windows to audit".into()));
    }
    match rule {
        ThresholdRule::Absolute(t) => Ok(t),
        ThresholdRule::Percentile(p) if p > 0.0 && p <= 100.0 => {
            Ok(stats::quantile(&background, p / 100.0))
        }
        ThresholdRule::Percentile(p) => Err(Error::Config(format!(
            "percentile must lie in (0, 100], got {p}"
        ))),
    }
}

/// NORMAL windows scoring strictly above the threshold, in index order.
pub fn flag_background(
    scores: &[f64],
    labels: &[WindowLabel],
    rule: ThresholdRule,
) -> Result<Vec<usize>> {
    let t = background_threshold(scores, labels, rule)?;
    Ok((0..scores.len())
        .filter(|&i| labels[i].is_normal() && scores[i] > t)
        .collect())
}

/// Maximal runs where successive ids differ by at most `max_gap`.
pub fn group_periods(flagged: &[usize], max_gap: usize) -> Vec<Vec<usize>> {
    let mut ids = flagged.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for id in ids {
        match out.last_mut() {
            Some(run) if id - run.last().unwrap() <= max_gap => run.push(id),
            _ => out.push(vec![id]),
        }
    }
    out
}

pub fn diagnose_period(
    period: &[usize],
    matrix: &ObservationMatrix,
    reference: &AutoscaleParams,
    reference_id: &str,
    scores: &[f64],
    top_k: usize,
) -> Result<SuspiciousPeriod> {
    if period.is_empty() {
        return Err(Error::EmptySelection("empty period".into()));
    }
    if scores.len() != matrix.n_windows() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} windows",
            scores.len(),
            matrix.n_windows()
        )));
    }
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let labels = matrix.window_labels();
    if let Some(&w) = period
        .iter()
        .find(|&&w| w < labels.len() && !labels[w].is_normal())
    {
        return Err(Error::InvalidInput(format!(
            "window {w} is not labelled NORMAL"
        )));
    }
    let diagnosis = u_squared_windows(matrix, period, reference, reference_id)?;
    let ranked: Vec<RankedFeature> = rank_features(&diagnosis, top_k);

    let in_period = {
        let mut v = vec![false; matrix.n_windows()];
        for &w in period {
            v[w] = true;
        }
        v
    };
    let others: Vec<usize> = (0..matrix.n_windows())
        .filter(|&i| labels[i].is_normal() && !in_period[i])
        .collect();
    let mut feature_tests = Vec::with_capacity(ranked.len());
    for r in ranked {
        let j = matrix
            .feature_index(&r.name)
            .expect("ranked feature exists");
        let a: Vec<f64> = period.iter().map(|&w| matrix.get(w, j)).collect();
        let b: Vec<f64> = others.iter().map(|&w| matrix.get(w, j)).collect();
        let test = if a.len() >= 2 && b.len() >= 2 {
            Some(welch_ttest(&a, &b, Alternative::Greater)?)
        } else {
            None
        };
        feature_tests.push(FeatureTest {
            feature: r.name,
            accumulated: r.accumulated,
            test,
        });
    }
    Ok(SuspiciousPeriod {
        window_ids: period.to_vec(),
        window_starts: period.iter().map(|&w| matrix.window_starts()[w]).collect(),
        peak_score: period
            .iter()
            .map(|&w| scores[w])
            .fold(f64::NEG_INFINITY, f64::max),
        diagnosis,
        feature_tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    pub start: Timestamp,
    pub end: Timestamp,
    pub windows: usize,
    pub peak_score: f64,
    pub top_features: Vec<FeatureTest>,
    /// Left empty for the analyst.
    pub verdict: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub reference_id: String,
    pub threshold_rule: ThresholdRule,
    pub threshold: f64,
    pub flagged_windows: usize,
    pub periods: Vec<PeriodEntry>,
}

/// Full audit of the background windows of `matrix`.
pub fn audit(
    matrix: &ObservationMatrix,
    scores: &[f64],
    reference: &AutoscaleParams,
    reference_id: &str,
    params: &AuditParams,
) -> Result<(AuditReport, Vec<SuspiciousPeriod>)> {
    let labels = matrix.window_labels();
    let threshold = background_threshold(scores, labels, params.threshold)?;
    let flagged = flag_background(scores, labels, params.threshold)?;
    let periods = group_periods(&flagged, params.max_gap)
        .iter()
        .map(|p| diagnose_period(p, matrix, reference, reference_id, scores, params.top_k))
        .collect::<Result<Vec<_>>>()?;
    let wl = matrix.window_length();
    let entries = periods
        .iter()
        .map(|p| PeriodEntry {
            start: p.window_starts[0],
            end: p.window_starts.last().unwrap().plus(wl),
            windows: p.window_ids.len(),
            peak_score: p.peak_score,
            top_features: p.feature_tests.clone(),
            verdict: None,
        })
        .collect();
    Ok((
        AuditReport {
            reference_id: reference_id.to_string(),
            threshold_rule: params.threshold,
            threshold,
            flagged_windows: flagged.len(),
            periods: entries,
        },
        periods,
    ))
}

impl AuditReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
