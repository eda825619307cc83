//! Subcommand implementations. Every output path is write-once: an existing
//! file (or a non-empty directory) is a configuration error.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use flowqual::audit::{audit, AuditParams, ThresholdRule};
use flowqual::diagnosis::{export_bars, rank_features, u_squared_windows};
use flowqual::evaluation::{
    auc_per_attack, boxplot_stats, export_timeseries, roc_auc, welch_ttest, write_roc_csv,
    Alternative,
};
use flowqual::faac::{featurize, FeatureConfig, ObservationMatrix};
use flowqual::flow::{
    exclude_flows, merge_bidirectional, read_flow_file, write_flow_file, AttackType, FlowPredicate,
    MergePolicy,
};
use flowqual::msnm::{fit_msnm, ComponentRule, MsnmParams};
use flowqual::ocsvm::{fit_ocsvm, GammaRule, OcsvmParams};
use flowqual::pipeline::{read_scores, run_plan, write_scores, DetectorModel, ExperimentPlan};
use flowqual::scaling::AutoscaleParams;
use flowqual::synth::{generate, preset, ScenarioConfig};
use flowqual::{Error, Result};

use crate::{
    AuditArgs, Command, DetectorArg, DiagnoseArgs, EvaluateArgs, FeaturizeArgs, FitArgs,
    MatrixInput, MergeArgs, ParseArgs, RunArgs, ScoreArgs, SynthArgs,
};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Parse(a) => parse(a),
        Command::Merge(a) => merge(a),
        Command::Featurize(a) => featurize_cmd(a),
        Command::Fit(a) => fit(a),
        Command::Score(a) => score(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Audit(a) => audit_cmd(a),
        Command::Run(a) => run(a),
    }
}

fn fresh_file(path: &Path) -> Result<()> {
    if path.exists() {
        return Err(Error::Config(format!(
            "refusing to overwrite {}",
            path.display()
        )));
    }
    Ok(())
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        let mut entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!(
                "output directory {} is not empty",
                path.display()
            )));
        }
    }
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    fresh_file(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_matrix(input: &MatrixInput) -> Result<ObservationMatrix> {
    ObservationMatrix::load(&input.matrix, input.window)
}

/// Autoscale statistics from a reference matrix (NORMAL windows) or a model.
fn load_reference(
    matrix: Option<&Path>,
    model: Option<&Path>,
    window: i64,
) -> Result<(AutoscaleParams, String)> {
    match (matrix, model) {
        (Some(p), _) => {
            let m = ObservationMatrix::load(p, window)?;
            let normal = m.select_rows(&m.normal_rows());
            Ok((AutoscaleParams::fit(&normal)?, p.display().to_string()))
        }
        (None, Some(p)) => {
            let scaling = match DetectorModel::load(p)? {
                DetectorModel::Msnm(m) => m.scaling,
                DetectorModel::Ocsvm(m) => m.scaling,
            };
            Ok((scaling, p.display().to_string()))
        }
        (None, None) => Err(Error::Config(
            "a reference matrix or model is required".into(),
        )),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = match (&a.preset, &a.config) {
        (Some(name), _) => preset(name, a.seed.unwrap_or(0))?,
        (None, Some(path)) => {
            let mut cfg = ScenarioConfig::load(path)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            cfg
        }
        (None, None) => return Err(Error::Config("--preset or --config is required".into())),
    };
    let scenario = generate(&cfg)?;
    fresh_dir(&a.out)?;
    write_flow_file(&a.out.join("flows.csv"), &scenario.flows)?;
    scenario.manifest.save(&a.out.join("manifest.json"))?;
    write_new(
        &a.out.join("scenario.toml"),
        cfg.to_toml_string().as_bytes(),
    )?;
    println!(
        "{} flows ({} background) written to {}",
        scenario.manifest.total_flows,
        scenario.manifest.background_flows,
        a.out.display()
    );
    Ok(())
}

fn parse(a: ParseArgs) -> Result<()> {
    fresh_file(&a.out)?;
    let parsed = read_flow_file(&a.input, a.strict)?;
    for r in &parsed.skip_reasons {
        log::warn!("{r}");
    }
    write_flow_file(&a.out, &parsed.records)?;
    println!(
        "{} records, {} lines skipped",
        parsed.records.len(),
        parsed.skipped
    );
    Ok(())
}

fn merge(a: MergeArgs) -> Result<()> {
    fresh_file(&a.out)?;
    let parsed = read_flow_file(&a.input, a.strict)?;
    let policy = MergePolicy {
        pairing: a.pairing.into(),
        time_tolerance: a.tolerance,
        extend_by_duration: !a.no_extend,
    };
    let outcome = merge_bidirectional(&parsed.records, &policy)?;
    write_flow_file(&a.out, &outcome.flows)?;
    println!(
        "{} records in, {} out, {} pairs merged",
        parsed.records.len(),
        outcome.flows.len(),
        outcome.merged_pairs
    );
    Ok(())
}

fn featurize_cmd(a: FeaturizeArgs) -> Result<()> {
    fresh_file(&a.out)?;
    let config = match &a.features {
        Some(p) => FeatureConfig::load(p)?,
        None => FeatureConfig::default_dictionary(),
    };
    let mut flows = read_flow_file(&a.input, a.strict)?.records;
    for text in &a.exclude {
        let pred: FlowPredicate = text.parse()?;
        let ex = exclude_flows(&flows, &pred);
        log::info!("exclusion {pred}: {} flows removed", ex.removed);
        flows = ex.kept;
    }
    let range = a.start.zip(a.end);
    let matrix = featurize(&flows, &config, range)?;
    matrix.save(&a.out)?;
    println!(
        "{} windows × {} features",
        matrix.n_windows(),
        matrix.n_features()
    );
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    fresh_file(&a.out)?;
    let mut matrix = load_matrix(&a.input)?;
    if let Some((s, e)) = a.since.zip(a.until) {
        matrix = matrix.select_time_range(s, e)?;
    }
    let (matrix, missing) = matrix.exclude_observations(&a.exclude_windows);
    for t in missing {
        log::warn!("excluded window {t} is not in the calibration matrix");
    }
    let calibration = matrix.select_rows(&matrix.normal_rows());
    let model = match a.detector {
        DetectorArg::Msnm => {
            let components = match (a.components, a.variance) {
                (Some(k), _) => ComponentRule::Fixed(k),
                (None, Some(f)) => ComponentRule::VarianceFraction(f),
                (None, None) => MsnmParams::default().components,
            };
            let params = MsnmParams {
                components,
                limit_percentile: a.percentile,
            };
            DetectorModel::Msnm(fit_msnm(&calibration, &params)?)
        }
        DetectorArg::Ocsvm => {
            let params = OcsvmParams {
                nu: a.nu,
                gamma: a.gamma.map_or(GammaRule::MedianHeuristic, GammaRule::Fixed),
                tol: a.tol,
                max_calibration: a.max_calibration,
                ..OcsvmParams::default()
            };
            DetectorModel::Ocsvm(fit_ocsvm(&calibration, &params)?)
        }
    };
    model.save(&a.out)?;
    println!(
        "{} fitted on {} windows",
        model.detector(),
        calibration.n_windows()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    fresh_file(&a.out)?;
    let model = DetectorModel::load(&a.model)?;
    let matrix = load_matrix(&a.input)?;
    let table = model.score(&matrix)?;
    let mut buf = Vec::new();
    write_scores(&table, &mut buf).map_err(|e| Error::io(&a.out, e))?;
    write_new(&a.out, &buf)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let table = read_scores(&a.scores)?;
    let roc = roc_auc(&table.scores, &table.positives())?;
    let per_attack = auc_per_attack(&table.scores, &table.labels)?;
    let matrix = match &a.matrix {
        Some(p) => Some(ObservationMatrix::load(p, a.window)?),
        None => None,
    };
    if let Some(m) = &matrix {
        if m.window_starts() != table.window_starts.as_slice() {
            return Err(Error::InvalidInput(
                "scores and matrix windows differ".into(),
            ));
        }
        for f in &a.features {
            if m.feature_index(f).is_none() {
                return Err(Error::FeatureMismatch(format!("unknown feature {f:?}")));
            }
        }
    }

    fresh_dir(&a.out)?;
    let mut buf = Vec::new();
    write_roc_csv(&roc, &mut buf).map_err(|e| Error::io(&a.out, e))?;
    write_new(&a.out.join("roc.csv"), &buf)?;
    let mut text = String::from("attack,auc\n");
    let _ = writeln!(text, "all,{}", roc.auc);
    for (t, auc) in &per_attack {
        let _ = writeln!(text, "{t},{auc}");
    }
    write_new(&a.out.join("auc_per_attack.csv"), text.as_bytes())?;
    print!("{text}");

    if let (Some(m), false) = (&matrix, a.features.is_empty()) {
        feature_statistics(m, &a.features, &a.out)?;
        let names: Vec<&str> = a.features.iter().map(String::as_str).collect();
        export_timeseries(m, &names, a.from.zip(a.to), &a.out.join("timeseries.csv"))?;
    }
    Ok(())
}

/// Boxplots of each feature per group (background and every attack type),
/// and one-sided Welch tests of attack windows against background.
fn feature_statistics(m: &ObservationMatrix, features: &[String], out: &Path) -> Result<()> {
    let normal = m.normal_rows();
    let groups: Vec<(String, Vec<usize>)> =
        std::iter::once(("background".to_string(), normal.clone()))
            .chain(AttackType::ALL.iter().filter_map(|&t| {
                let rows: Vec<usize> = (0..m.n_windows())
                    .filter(|&i| m.window_labels()[i].contains(t))
                    .collect();
                (!rows.is_empty()).then(|| (t.to_string(), rows))
            }))
            .collect();

    let mut boxes =
        String::from("feature,group,n,q1,median,q3,whisker_low,whisker_high,outliers\n");
    let mut tests = String::from("feature,attack,t_stat,dof,p_value,degenerate\n");
    for f in features {
        let j = m.feature_index(f).expect("checked by caller");
        let values = |rows: &[usize]| rows.iter().map(|&i| m.get(i, j)).collect::<Vec<f64>>();
        let background = values(&normal);
        for (name, rows) in &groups {
            let v = values(rows);
            let b = boxplot_stats(&v)?;
            let _ = writeln!(
                boxes,
                "{f},{name},{},{},{},{},{},{},{}",
                v.len(),
                b.q1,
                b.median,
                b.q3,
                b.whisker_low,
                b.whisker_high,
                b.outliers.len()
            );
            if name == "background" || v.len() < 2 || background.len() < 2 {
                continue;
            }
            let t = welch_ttest(&v, &background, Alternative::Greater)?;
            let _ = writeln!(
                tests,
                "{f},{name},{},{},{},{}",
                t.t_stat, t.dof, t.p_value, t.degenerate
            );
        }
    }
    write_new(&out.join("boxplot.csv"), boxes.as_bytes())?;
    write_new(&out.join("ttest.csv"), tests.as_bytes())
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    fresh_file(&a.out)?;
    if let Some(j) = &a.json {
        fresh_file(j)?;
    }
    let matrix = load_matrix(&a.input)?;
    let (reference, reference_id) = load_reference(
        a.reference_matrix.as_deref(),
        a.reference_model.as_deref(),
        a.input.window,
    )?;
    let rows: Vec<usize> = if let Some(name) = &a.attack {
        let t: AttackType = name.parse()?;
        (0..matrix.n_windows())
            .filter(|&i| matrix.window_labels()[i].contains(t))
            .collect()
    } else if let Some((from, to)) = a.from.zip(a.to) {
        (0..matrix.n_windows())
            .filter(|&i| matrix.window_starts()[i] >= from && matrix.window_starts()[i] < to)
            .collect()
    } else {
        a.window_at
            .iter()
            .map(|t| {
                matrix
                    .window_index(*t)
                    .ok_or_else(|| Error::InvalidInput(format!("no window starts at {t}")))
            })
            .collect::<Result<_>>()?
    };
    let report = u_squared_windows(&matrix, &rows, &reference, &reference_id)?;
    export_bars(&report, &a.out)?;
    if let Some(j) = &a.json {
        write_new(j, (report.to_json(true) + "\n").as_bytes())?;
    }
    for r in rank_features(&report, a.top_k) {
        println!("{}\t{}", r.name, r.accumulated);
    }
    Ok(())
}

fn audit_cmd(a: AuditArgs) -> Result<()> {
    fresh_file(&a.out)?;
    let matrix = load_matrix(&a.input)?;
    let table = read_scores(&a.scores)?;
    if matrix.window_starts() != table.window_starts.as_slice() {
        return Err(Error::InvalidInput(
            "scores and matrix windows differ".into(),
        ));
    }
    let (reference, reference_id) = load_reference(
        a.reference_matrix.as_deref(),
        a.reference_model.as_deref(),
        a.input.window,
    )?;
    let params = AuditParams {
        threshold: a.absolute.map_or(
            ThresholdRule::Percentile(a.percentile),
            ThresholdRule::Absolute,
        ),
        max_gap: a.max_gap,
        top_k: a.top_k,
    };
    let (report, _) = audit(&matrix, &table.scores, &reference, &reference_id, &params)?;
    report.save(&a.out)?;
    println!(
        "threshold {}: {} windows flagged in {} periods",
        report.threshold,
        report.flagged_windows,
        report.periods.len()
    );
    for p in &report.periods {
        let top: Vec<&str> = p
            .top_features
            .iter()
            .take(3)
            .map(|f| f.feature.as_str())
            .collect();
        println!(
            "{}..{}\t{} windows\tpeak {}\t{}",
            p.start,
            p.end,
            p.windows,
            p.peak_score,
            top.join(",")
        );
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut plan = ExperimentPlan::load(&a.plan)?;
    if let Some(w) = a.workers {
        plan.workers = w;
    }
    let out = match (&a.out, &plan.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => plan.resolve(o),
        (None, None) => {
            return Err(Error::Config(
                "no output directory: pass --out or set `output`".into(),
            ))
        }
    };
    let report = run_plan(&plan, &out)?;
    println!(
        "{} AUC rows written to {}",
        report.auc_rows.len(),
        out.join("auc_summary.csv").display()
    );
    match report.failures.first() {
        None => Ok(()),
        Some(first) => {
            for f in &report.failures {
                eprintln!(
                    "{} / {}: {}",
                    f.variant,
                    f.detector.map_or("-", |d| d.as_str()),
                    f.message
                );
            }
            Err(failure_error(
                first.kind,
                format!("{} cell(s) failed", report.failures.len()),
            ))
        }
    }
}

fn failure_error(kind: flowqual::ErrorKind, message: String) -> Error {
    match kind {
        flowqual::ErrorKind::Config => Error::Config(message),
        flowqual::ErrorKind::Io => Error::Format {
            path: "<plan>".into(),
            message,
        },
        flowqual::ErrorKind::Numerical => Error::Numerical(message),
    }
}
