use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faac::WindowLabel;
use crate::flow::AttackType;

pub const ROC_HEADER: &str = "threshold,fpr,tpr";
pub const AUC_SUMMARY_HEADER: &str = "variant,detector,attack,auc";

/// Agreement required between the trapezoidal and rank-sum AUC.
const AUC_AGREEMENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Score threshold of each point; a window is positive when its score is
    /// at least the threshold. The first threshold is `+inf`.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

fn check_scores(scores: &[f64], n_labels: usize) -> Result<()> {
    if scores.len() != n_labels {
        return Err(Error::InvalidInput(format!(
            "{} scores but {n_labels} labels",
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {i} is NaN")));
    }
    Ok(())
}

/// ROC curve over `scores` where `positive[i]` marks anomalous windows.
/// Equal scores form a single (diagonal) step.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    check_scores(scores, positive.len())?;
    let p = positive.iter().filter(|&&b| b).count() as u64;
    let n = positive.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidInput(format!(
            "ROC needs both classes: {p} positive, {n} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one positive-negative pair.
    let mut area2: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if positive[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
        thresholds.push(s);
    }
    let auc = area2 as f64 / (2.0 * p as f64 * n as f64);
    let mw = mann_whitney_auc(scores, positive)?;
    if (auc - mw).abs() > AUC_AGREEMENT {
        return Err(Error::Numerical(format!(
            "trapezoidal AUC {auc} disagrees with rank-sum AUC {mw}"
        )));
    }
    Ok(RocCurve {
        points,
        thresholds,
        auc,
    })
}

/// AUC as `U / (P·N)` from the rank sum of the positives, using mid-ranks
/// for ties (a tied pair counts ½).
pub fn mann_whitney_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    check_scores(scores, positive.len())?;
    let p = positive.iter().filter(|&&b| b).count() as u128;
    let n = positive.len() as u128 - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidInput(
            "rank-sum AUC needs both classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Doubled ranks keep mid-ranks integral: a tie block covering 1-based
    // ranks lo..=hi has doubled mid-rank lo + hi.
    let mut rank_sum2: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        let mid2 = (k + 1 + end + 1) as u128;
        for &i in &order[k..=end] {
            if positive[i] {
                rank_sum2 += mid2;
            }
        }
        k = end + 1;
    }
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2.0 * p as f64 * n as f64))
}

/// Per-attack AUC: positives are windows containing the attack, negatives
/// are NORMAL windows; windows holding only other attacks are left out.
/// Attack types with no window are omitted.
pub fn auc_per_attack(scores: &[f64], labels: &[WindowLabel]) -> Result<BTreeMap<AttackType, f64>> {
    check_scores(scores, labels.len())?;
    if !labels.iter().any(|l| l.is_normal()) {
        return Err(Error::InvalidInput(
            "no NORMAL windows to compare against".into(),
        ));
    }
    let mut out = BTreeMap::new();
    for t in AttackType::ALL {
        if !labels.iter().any(|l| l.contains(t)) {
            continue;
        }
        let (s, y): (Vec<f64>, Vec<bool>) = scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.is_normal() || l.contains(t))
            .map(|(s, l)| (*s, l.contains(t)))
            .unzip();
        out.insert(t, roc_auc(&s, &y)?.auc);
    }
    Ok(out)
}

pub fn write_roc_csv<W: Write>(curve: &RocCurve, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{ROC_HEADER}")?;
    for (t, (fpr, tpr)) in curve.thresholds.iter().zip(&curve.points) {
        writeln!(w, "{t},{fpr},{tpr}")?;
    }
    Ok(())
}

/// One line of the AUC summary; `attack` is `all` for the pooled curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub variant: String,
    pub detector: String,
    pub attack: String,
    pub auc: f64,
}

pub fn write_auc_summary<W: Write>(rows: &[AucRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{AUC_SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.variant, r.detector, r.attack, r.auc)?;
    }
    Ok(())
}
