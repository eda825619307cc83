use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::Detector;
use crate::error::{Error, Result};
use crate::faac::{ObservationMatrix, WindowLabel};
use crate::msnm::{score_msnm, MsnmModel};
use crate::ocsvm::{score_ocsvm, OcsvmModel};
use crate::time::Timestamp;

/// A fitted model of either kind, tagged by detector in its JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "lowercase")]
pub enum DetectorModel {
    Msnm(MsnmModel),
    Ocsvm(OcsvmModel),
}

impl DetectorModel {
    pub fn detector(&self) -> Detector {
        match self {
            DetectorModel::Msnm(_) => Detector::Msnm,
            DetectorModel::Ocsvm(_) => Detector::Ocsvm,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            DetectorModel::Msnm(m) => m.feature_names(),
            DetectorModel::Ocsvm(m) => m.feature_names(),
        }
    }

    pub fn score(&self, matrix: &ObservationMatrix) -> Result<ScoreTable> {
        let (scores, extra) = match self {
            DetectorModel::Msnm(m) => {
                let s = score_msnm(m, matrix)?;
                let extra = s.iter().map(|x| vec![x.d_stat, x.q_stat]).collect();
                (
                    s.iter().map(|x| x.score).collect(),
                    Some((vec!["d_stat".into(), "q_stat".into()], extra)),
                )
            }
            DetectorModel::Ocsvm(m) => (score_ocsvm(m, matrix)?, None),
        };
        let (extra_names, extra) = extra.unwrap_or_default();
        Ok(ScoreTable {
            window_starts: matrix.window_starts().to_vec(),
            labels: matrix.window_labels().to_vec(),
            extra_names,
            extra,
            scores,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DetectorModel =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        // Re-run the per-detector consistency checks.
        match &m {
            DetectorModel::Msnm(x) => {
                MsnmModel::from_json(&serde_json::to_string(x).expect("serializes"))?;
            }
            DetectorModel::Ocsvm(x) => {
                OcsvmModel::from_json(&serde_json::to_string(x).expect("serializes"))?;
            }
        }
        Ok(m)
    }
}

/// Per-window scores with labels; `extra` holds detector-specific columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub window_starts: Vec<Timestamp>,
    pub labels: Vec<WindowLabel>,
    pub extra_names: Vec<String>,
    pub extra: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

impl ScoreTable {
    pub fn positives(&self) -> Vec<bool> {
        self.labels.iter().map(|l| !l.is_normal()).collect()
    }
}

/// CSV `window_start,label,attack_types[,extra...],score`.
pub fn write_scores<W: Write>(t: &ScoreTable, mut w: W) -> std::io::Result<()> {
    write!(w, "window_start,label,attack_types")?;
    for n in &t.extra_names {
        write!(w, ",{n}")?;
    }
    writeln!(w, ",score")?;
    for i in 0..t.scores.len() {
        write!(
            w,
            "{},{},{}",
            t.window_starts[i],
            t.labels[i].label_token(),
            t.labels[i].attack_token()
        )?;
        if let Some(x) = t.extra.get(i) {
            for v in x {
                write!(w, ",{v}")?;
            }
        }
        writeln!(w, ",{}", t.scores[i])?;
    }
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<ScoreTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4
        || cols[..3] != ["window_start", "label", "attack_types"]
        || cols[cols.len() - 1] != "score"
    {
        return Err(Error::format(
            path,
            format!("unexpected score header {header:?}"),
        ));
    }
    let extra_names: Vec<String> = cols[3..cols.len() - 1]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut t = ScoreTable {
        window_starts: Vec::new(),
        labels: Vec::new(),
        extra: Vec::new(),
        extra_names,
        scores: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split(',').collect();
        let at = |m: String| Error::format(path, format!("line {}: {m}", i + 2));
        if f.len() != cols.len() {
            return Err(at(format!(
                "expected {} fields, got {}",
                cols.len(),
                f.len()
            )));
        }
        t.window_starts
            .push(f[0].parse().map_err(|e: Error| at(e.to_string()))?);
        t.labels
            .push(WindowLabel::parse_tokens(f[1], f[2]).map_err(at)?);
        let nums: Vec<f64> = f[3..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| at(e.to_string()))?;
        t.scores.push(nums[nums.len() - 1]);
        if !t.extra_names.is_empty() {
            t.extra.push(nums[..nums.len() - 1].to_vec());
        }
    }
    Ok(t)
}
