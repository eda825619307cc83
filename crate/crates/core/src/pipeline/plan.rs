use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowPredicate, Pairing};
use crate::msnm::MsnmParams;
use crate::ocsvm::OcsvmParams;
use crate::synth::PRESETS;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Msnm,
    Ocsvm,
}

impl Detector {
    pub fn as_str(self) -> &'static str {
        match self {
            Detector::Msnm => "msnm",
            Detector::Ocsvm => "ocsvm",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msnm" => Ok(Detector::Msnm),
            "ocsvm" => Ok(Detector::Ocsvm),
            _ => Err(Error::Config(format!(
                "unknown detector {s:?}; expected msnm or ocsvm"
            ))),
        }
    }
}

/// One dataset variant: a flow source plus the processing applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub id: String,
    /// Built-in scenario preset, generated with the plan seed.
    #[serde(default)]
    pub synthetic: Option<String>,
    /// Scenario file; its own seed is replaced by the plan seed.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// Flow CSV file.
    #[serde(default)]
    pub flows: Option<PathBuf>,
    /// Column-wise union of two other (non-union) variants.
    #[serde(default)]
    pub union: Option<[String; 2]>,
    #[serde(default)]
    pub union_prefixes: Option<[String; 2]>,
    #[serde(default)]
    pub merge: Option<Pairing>,
    #[serde(default)]
    pub merge_tolerance: Option<f64>,
    /// Feature dictionary file; the built-in dictionary when absent.
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub flow_exclusions: Vec<String>,
    #[serde(default)]
    pub calibration: Option<[Timestamp; 2]>,
    #[serde(default)]
    pub test: Option<[Timestamp; 2]>,
    /// Windows removed from the calibration set.
    #[serde(default)]
    pub exclude_windows: Vec<Timestamp>,
    /// Features removed after featurization.
    #[serde(default)]
    pub drop: Vec<String>,
}

impl VariantSpec {
    pub(crate) fn union_prefixes(&self) -> (String, String) {
        match &self.union_prefixes {
            Some([a, b]) => (a.clone(), b.clone()),
            None => {
                let [a, b] = self.union.as_ref().expect("union variant");
                (format!("{a}_"), format!("{b}_"))
            }
        }
    }

    pub(crate) fn predicates(&self) -> Result<Vec<FlowPredicate>> {
        self.flow_exclusions.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub seed: u64,
    /// Output directory, relative to the plan file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "one")]
    pub workers: usize,
    pub detectors: Vec<String>,
    #[serde(default)]
    pub msnm: MsnmParams,
    #[serde(default)]
    pub ocsvm: OcsvmParams,
    /// Also write U-Squared bars of each attack's test windows.
    #[serde(default)]
    pub diagnose: bool,
    #[serde(rename = "variant")]
    pub variants: Vec<VariantSpec>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut plan: ExperimentPlan =
            toml::from_str(text).map_err(|e| Error::Config(format!("plan: {e}")))?;
        plan.base_dir = base_dir.to_path_buf();
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn parsed_detectors(&self) -> Result<Vec<Detector>> {
        let mut out = Vec::new();
        for d in &self.detectors {
            let d: Detector = d.parse()?;
            if out.contains(&d) {
                return Err(Error::Config(format!("detector {d} listed twice")));
            }
            out.push(d);
        }
        Ok(out)
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.detectors.is_empty() {
            return bad("plan lists no detectors".into());
        }
        self.parsed_detectors()?;
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.variants.is_empty() {
            return bad("plan has no variants".into());
        }
        let mut ids = BTreeSet::new();
        for v in &self.variants {
            if v.id.is_empty()
                || !v
                    .id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                || v.id.starts_with('.')
            {
                return bad(format!(
                    "variant id {:?} must be non-empty and use [A-Za-z0-9._-]",
                    v.id
                ));
            }
            if !ids.insert(v.id.as_str()) {
                return bad(format!("duplicate variant id {:?}", v.id));
            }
        }
        for v in &self.variants {
            let sources = [
                v.synthetic.is_some(),
                v.scenario.is_some(),
                v.flows.is_some(),
                v.union.is_some(),
            ]
            .iter()
            .filter(|b| **b)
            .count();
            if sources != 1 {
                return bad(format!(
                    "variant {:?} needs exactly one of synthetic, scenario, flows, union",
                    v.id
                ));
            }
            if let Some(p) = &v.synthetic {
                if !PRESETS.contains(&p.as_str()) {
                    return bad(format!("variant {:?}: unknown preset {p:?}", v.id));
                }
            }
            if let Some(pair) = &v.union {
                for r in pair {
                    match self.variants.iter().find(|o| &o.id == r) {
                        None => {
                            return bad(format!("variant {:?}: unknown union member {r:?}", v.id))
                        }
                        Some(o) if o.union.is_some() => {
                            return bad(format!(
                                "variant {:?}: union member {r:?} is itself a union",
                                v.id
                            ))
                        }
                        _ => {}
                    }
                }
                if v.merge.is_some() || !v.flow_exclusions.is_empty() || v.features.is_some() {
                    return bad(format!(
                        "variant {:?}: union variants take merge, exclusions and features from their members",
                        v.id
                    ));
                }
            }
            if v.flows.is_some() && (v.calibration.is_none() || v.test.is_none()) {
                return bad(format!(
                    "variant {:?}: flow files need calibration and test ranges",
                    v.id
                ));
            }
            for r in [&v.calibration, &v.test].into_iter().flatten() {
                if r[0] >= r[1] {
                    return bad(format!(
                        "variant {:?}: empty range [{}, {})",
                        v.id, r[0], r[1]
                    ));
                }
            }
            if let Some(t) = v.merge_tolerance {
                if v.merge.is_none() || !(t >= 0.0) {
                    return bad(format!(
                        "variant {:?}: merge_tolerance needs merge and must be ≥ 0",
                        v.id
                    ));
                }
            }
            v.predicates()?;
        }
        Ok(())
    }
}
