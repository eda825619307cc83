use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::plan::{Detector, ExperimentPlan, VariantSpec};
use super::scores::{write_scores, DetectorModel};
use crate::diagnosis::{export_bars, u_squared_windows};
use crate::error::{Error, ErrorKind, Result};
use crate::evaluation::{auc_per_attack, roc_auc, write_auc_summary, write_roc_csv, AucRow};
use crate::faac::{featurize, FeatureConfig, ObservationMatrix};
use crate::flow::{
    exclude_flows, merge_bidirectional, read_flow_file, AttackType, FlowRecord, MergePolicy,
};
use crate::msnm::fit_msnm;
use crate::ocsvm::fit_ocsvm;
use crate::scaling::AutoscaleParams;
use crate::synth::{generate, preset, ScenarioConfig};
use crate::time::Timestamp;

type Range = (Timestamp, Timestamp);

/// A variant's matrices: the full range and its calibration/test splits.
#[derive(Debug, Clone)]
pub struct PreparedVariant {
    pub id: String,
    pub full: ObservationMatrix,
    /// NORMAL windows of the calibration range, minus excluded windows.
    pub calibration: ObservationMatrix,
    pub test: ObservationMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub variant: String,
    pub detector: Option<Detector>,
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct PlanReport {
    pub output: PathBuf,
    pub auc_rows: Vec<AucRow>,
    pub failures: Vec<CellFailure>,
}

impl PlanReport {
    pub fn auc(&self, variant: &str, detector: Detector, attack: &str) -> Option<f64> {
        self.auc_rows
            .iter()
            .find(|r| r.variant == variant && r.detector == detector.as_str() && r.attack == attack)
            .map(|r| r.auc)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
enum SourceKey {
    Preset(String),
    Scenario(PathBuf),
    Flows(PathBuf),
}

struct Source {
    flows: Vec<FlowRecord>,
    ranges: Option<(Range, Range)>,
}

fn source_key(plan: &ExperimentPlan, v: &VariantSpec) -> Option<SourceKey> {
    if let Some(p) = &v.synthetic {
        Some(SourceKey::Preset(p.clone()))
    } else if let Some(p) = &v.scenario {
        Some(SourceKey::Scenario(plan.resolve(p)))
    } else {
        v.flows.as_ref().map(|p| SourceKey::Flows(plan.resolve(p)))
    }
}

fn load_source(plan: &ExperimentPlan, key: &SourceKey) -> Result<Source> {
    let scenario = |cfg: ScenarioConfig| -> Result<Source> {
        let ranges = (cfg.calibration_range(), cfg.test_range());
        let s = generate(&cfg)?;
        Ok(Source {
            flows: s.flows,
            ranges: Some(ranges),
        })
    };
    match key {
        SourceKey::Preset(name) => scenario(preset(name, plan.seed)?),
        SourceKey::Scenario(path) => {
            let mut cfg = ScenarioConfig::load(path)?;
            cfg.seed = plan.seed;
            scenario(cfg)
        }
        SourceKey::Flows(path) => Ok(Source {
            flows: read_flow_file(path, true)?.records,
            ranges: None,
        }),
    }
}

fn ranges_of(v: &VariantSpec, fallback: Option<(Range, Range)>) -> Result<(Range, Range)> {
    let cal = v.calibration.map(|[a, b]| (a, b)).or(fallback.map(|f| f.0));
    let test = v.test.map(|[a, b]| (a, b)).or(fallback.map(|f| f.1));
    match (cal, test) {
        (Some(c), Some(t)) => Ok((c, t)),
        _ => Err(Error::Config(format!(
            "variant {:?} has no calibration/test range",
            v.id
        ))),
    }
}

fn hull(a: Range, b: Range) -> Range {
    (a.0.min(b.0), a.1.max(b.1))
}

fn base_matrix(
    plan: &ExperimentPlan,
    v: &VariantSpec,
    src: &Source,
    full: Range,
) -> Result<ObservationMatrix> {
    let mut flows: Vec<FlowRecord> = src
        .flows
        .iter()
        .filter(|f| f.start_time >= full.0 && f.start_time < full.1)
        .cloned()
        .collect();
    for p in v.predicates()? {
        flows = exclude_flows(&flows, &p).kept;
    }
    if let Some(pairing) = v.merge {
        let mut policy = MergePolicy::new(pairing);
        if let Some(t) = v.merge_tolerance {
            policy.time_tolerance = t;
        }
        flows = merge_bidirectional(&flows, &policy)?.flows;
        flows.retain(|f| f.start_time >= full.0 && f.start_time < full.1);
    }
    let config = match &v.features {
        Some(p) => FeatureConfig::load(&plan.resolve(p))?,
        None => FeatureConfig::default_dictionary(),
    };
    featurize(&flows, &config, Some(full))
}

fn finish(
    v: &VariantSpec,
    full: ObservationMatrix,
    excluded: &[Timestamp],
    (cal, test): (Range, Range),
) -> Result<PreparedVariant> {
    let drops: Vec<&str> = v.drop.iter().map(String::as_str).collect();
    let full = if drops.is_empty() {
        full
    } else {
        full.drop_features(&drops)?
    };
    let cal_m = full.select_time_range(cal.0, cal.1)?;
    let normal = cal_m.normal_rows();
    let cal_m = cal_m.select_rows(&normal);
    let (cal_m, _missing) = cal_m.exclude_observations(excluded);
    let test_m = full.select_time_range(test.0, test.1)?;
    Ok(PreparedVariant {
        id: v.id.clone(),
        full,
        calibration: cal_m,
        test: test_m,
    })
}

struct Base {
    prepared: PreparedVariant,
    ranges: (Range, Range),
}

/// Builds every variant's matrices; failures are reported per variant.
pub fn prepare_variants(plan: &ExperimentPlan) -> Vec<(String, Result<PreparedVariant>)> {
    let keys: Vec<SourceKey> = {
        let mut k: Vec<SourceKey> = plan
            .variants
            .iter()
            .filter_map(|v| source_key(plan, v))
            .collect();
        k.sort();
        k.dedup();
        k
    };
    let sources: BTreeMap<SourceKey, Result<Arc<Source>>> = keys
        .par_iter()
        .map(|k| (k.clone(), load_source(plan, k).map(Arc::new)))
        .collect();

    let base: Vec<Option<Result<Base>>> = plan
        .variants
        .par_iter()
        .map(|v| {
            let key = source_key(plan, v)?;
            Some((|| {
                let src = sources[&key].as_ref().map_err(Error::duplicate)?;
                let ranges = ranges_of(v, src.ranges)?;
                let m = base_matrix(plan, v, src, hull(ranges.0, ranges.1))?;
                Ok(Base {
                    prepared: finish(v, m, &v.exclude_windows, ranges)?,
                    ranges,
                })
            })())
        })
        .collect();

    plan.variants
        .iter()
        .zip(&base)
        .map(|(v, b)| {
            let r = match b {
                Some(Ok(b)) => Ok(b.prepared.clone()),
                Some(Err(e)) => Err(e.duplicate()),
                None => union_variant(plan, v, &base),
            };
            (v.id.clone(), r)
        })
        .collect()
}

fn union_variant(
    plan: &ExperimentPlan,
    v: &VariantSpec,
    base: &[Option<Result<Base>>],
) -> Result<PreparedVariant> {
    let member = |id: &str| -> Result<(&Base, &VariantSpec)> {
        let i = plan
            .variants
            .iter()
            .position(|o| o.id == id)
            .expect("validated member");
        match &base[i] {
            Some(Ok(b)) => Ok((b, &plan.variants[i])),
            Some(Err(e)) => Err(Error::InvalidInput(format!(
                "union member {id:?} failed: {e}"
            ))),
            None => unreachable!("union members are not unions"),
        }
    };
    let [a, b] = v.union.as_ref().expect("union variant");
    let ((ba, va), (bb, _)) = (member(a)?, member(b)?);
    let (xa, xb) = v.union_prefixes();
    let full = ObservationMatrix::union_features(&ba.prepared.full, &bb.prepared.full, (&xa, &xb))?;
    let ranges = (
        v.calibration.map(|[x, y]| (x, y)).unwrap_or(ba.ranges.0),
        v.test.map(|[x, y]| (x, y)).unwrap_or(ba.ranges.1),
    );
    let excluded = if v.exclude_windows.is_empty() {
        &va.exclude_windows
    } else {
        &v.exclude_windows
    };
    finish(v, full, excluded, ranges)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn fit(
    plan: &ExperimentPlan,
    detector: Detector,
    cal: &ObservationMatrix,
) -> Result<DetectorModel> {
    Ok(match detector {
        Detector::Msnm => DetectorModel::Msnm(fit_msnm(cal, &plan.msnm)?),
        Detector::Ocsvm => DetectorModel::Ocsvm(fit_ocsvm(cal, &plan.ocsvm)?),
    })
}

/// Fits, scores and evaluates one cell, writing its files under `dir`.
fn run_cell(
    plan: &ExperimentPlan,
    p: &PreparedVariant,
    detector: Detector,
    dir: &Path,
) -> Result<Vec<AucRow>> {
    let model = fit(plan, detector, &p.calibration)?;
    let table = model.score(&p.test)?;
    let roc = roc_auc(&table.scores, &table.positives())?;
    let per_attack = auc_per_attack(&table.scores, &table.labels)?;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("model.json"), model.to_json().as_bytes())?;
    let mut buf = Vec::new();
    write_scores(&table, &mut buf).expect("write to memory");
    write_file(&dir.join("scores.csv"), &buf)?;
    buf.clear();
    write_roc_csv(&roc, &mut buf).expect("write to memory");
    write_file(&dir.join("roc.csv"), &buf)?;
    let mut text = String::from("attack,auc\n");
    for (t, a) in &per_attack {
        text.push_str(&format!("{t},{a}\n"));
    }
    write_file(&dir.join("auc_per_attack.csv"), text.as_bytes())?;

    let row = |attack: String, auc: f64| AucRow {
        variant: p.id.clone(),
        detector: detector.as_str().to_string(),
        attack,
        auc,
    };
    let mut rows = vec![row("all".into(), roc.auc)];
    rows.extend(per_attack.iter().map(|(t, a)| row(t.to_string(), *a)));
    Ok(rows)
}

/// U-Squared bars of each attack's test windows against the calibration set.
fn diagnose_variant(p: &PreparedVariant, dir: &Path) -> Result<()> {
    let reference = AutoscaleParams::fit(&p.calibration)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in AttackType::ALL {
        let rows: Vec<usize> = (0..p.test.n_windows())
            .filter(|&i| p.test.window_labels()[i].contains(t))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let report =
            u_squared_windows(&p.test, &rows, &reference, &format!("{}:calibration", p.id))?;
        export_bars(&report, &dir.join(format!("usquared_{t}.csv")))?;
    }
    Ok(())
}

fn failure(variant: &str, detector: Option<Detector>, e: &Error) -> CellFailure {
    CellFailure {
        variant: variant.to_string(),
        detector,
        kind: e.kind(),
        message: e.to_string(),
    }
}

/// Runs every (variant, detector) cell of `plan` into `output`, which must be
/// absent or empty. A failing variant does not stop the others.
pub fn run_plan(plan: &ExperimentPlan, output: &Path) -> Result<PlanReport> {
    plan.validate()?;
    let detectors = plan.parsed_detectors()?;
    if output.exists() {
        let mut entries = fs::read_dir(output).map_err(|e| Error::io(output, e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!(
                "output directory {} is not empty",
                output.display()
            )));
        }
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    pool.install(|| {
        let prepared = prepare_variants(plan);
        let mut failures = Vec::new();
        let mut cells = Vec::new();
        for (id, p) in &prepared {
            match p {
                Ok(p) => {
                    for &d in &detectors {
                        cells.push((p, d));
                    }
                }
                Err(e) => failures.push(failure(id, None, e)),
            }
        }
        let results: Vec<Result<Vec<AucRow>>> = cells
            .par_iter()
            .map(|(p, d)| run_cell(plan, p, *d, &output.join(&p.id).join(d.as_str())))
            .collect();
        if plan.diagnose {
            let diag: Vec<(String, Result<()>)> = prepared
                .par_iter()
                .filter_map(|(id, p)| {
                    p.as_ref()
                        .ok()
                        .map(|p| (id.clone(), diagnose_variant(p, &output.join(id))))
                })
                .collect();
            for (id, r) in diag {
                if let Err(e) = r {
                    failures.push(failure(&id, None, &e));
                }
            }
        }
        let mut auc_rows = Vec::new();
        for ((p, d), r) in cells.iter().zip(results) {
            match r {
                Ok(rows) => auc_rows.extend(rows),
                Err(e) => failures.push(failure(&p.id, Some(*d), &e)),
            }
        }
        let mut buf = Vec::new();
        write_auc_summary(&auc_rows, &mut buf).expect("write to memory");
        write_file(&output.join("auc_summary.csv"), &buf)?;
        if !failures.is_empty() {
            let text = serde_json::to_string_pretty(&failures).expect("failures serialize") + "\n";
            write_file(&output.join("failures.json"), text.as_bytes())?;
        }
        Ok(PlanReport {
            output: output.to_path_buf(),
            auc_rows,
            failures,
        })
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn plan(extra: &str) -> ExperimentPlan {
        let text = format!(
            r#"
seed = 11
detectors = ["msnm"]
{extra}
[[variant]]
id = "uni"
synthetic = "dos-echo"

[[variant]]
id = "bidi"
synthetic = "dos-echo"
merge = "low_port_server"

[[variant]]
id = "both"
union = ["uni", "bidi"]
"#
        );
        ExperimentPlan::from_toml_str(&text, Path::new(".")).unwrap()
    }

    fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.insert(
                        p.strip_prefix(dir).unwrap().to_path_buf(),
                        fs::read(&p).unwrap(),
                    );
                }
            }
        }
        out
    }

    #[test]
    fn cells_write_their_files_deterministically() {
        let p = plan("diagnose = true");
        let tmp = tempfile::tempdir().unwrap();
        let r1 = run_plan(&p, &tmp.path().join("a")).unwrap();
        assert!(r1.failures.is_empty(), "{:?}", r1.failures);
        for v in ["uni", "bidi", "both"] {
            for f in ["model.json", "scores.csv", "roc.csv", "auc_per_attack.csv"] {
                assert!(tmp.path().join("a").join(v).join("msnm").join(f).is_file());
            }
            assert!(tmp
                .path()
                .join("a")
                .join(v)
                .join("usquared_dos.csv")
                .is_file());
        }
        let both = prepare_variants(&p).pop().unwrap().1.unwrap();
        let names: BTreeSet<&str> = both
            .full
            .feature_names()
            .iter()
            .map(String::as_str)
            .collect();
        assert!(names.contains("uni_dport_http") && names.contains("bidi_dport_http"));
        assert!(r1.auc("uni", Detector::Msnm, "dos").is_some());

        let r2 = run_plan(&p, &tmp.path().join("b")).unwrap();
        assert_eq!(r1.auc_rows, r2.auc_rows);
        assert_eq!(tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
        assert!(matches!(
            run_plan(&p, &tmp.path().join("a")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn failing_variant_does_not_stop_others() {
        let text = r#"
seed = 1
detectors = ["msnm"]

[[variant]]
id = "missing"
flows = "/nonexistent/flows.csv"
calibration = ["20240304000000", "20240305000000"]
test = ["20240305000000", "20240306000000"]

[[variant]]
id = "ok"
synthetic = "dos-echo"
"#;
        let p = ExperimentPlan::from_toml_str(text, Path::new(".")).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let r = run_plan(&p, tmp.path()).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].variant, "missing");
        assert_eq!(r.failures[0].kind, ErrorKind::Io);
        assert!(r.auc("ok", Detector::Msnm, "all").is_some());
        assert!(tmp.path().join("failures.json").is_file());
    }
}
