//! `flowqual`: flow parsing, featurization, anomaly detection, diagnosis and
//! label auditing from the command line.
//!
//! Exit codes: 0 success, 2 configuration, 3 I/O, 4 numerical.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowqual::flow::Pairing;
use flowqual::{ErrorKind, Timestamp};

#[derive(Parser, Debug)]
#[command(
    name = "flowqual",
    version,
    about = "Flow-based anomaly detection and label auditing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled flow scenario.
    Synth(SynthArgs),
    /// Parse and normalize a flow CSV, reporting skipped lines.
    Parse(ParseArgs),
    /// Merge unidirectional flows into bidirectional conversations.
    Merge(MergeArgs),
    /// Build the feature-as-a-counter observation matrix.
    Featurize(FeaturizeArgs),
    /// Fit a detector on the NORMAL windows of a calibration matrix.
    Fit(FitArgs),
    /// Score a matrix with a fitted model.
    Score(ScoreArgs),
    /// ROC/AUC, per-attack AUC and optional feature statistics.
    Evaluate(EvaluateArgs),
    /// U-Squared diagnosis of selected windows against a reference.
    Diagnose(DiagnoseArgs),
    /// Flag, group and diagnose high-scoring background windows.
    Audit(AuditArgs),
    /// Run every variant × detector cell of an experiment plan.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Built-in scenario: default, botnet, dos-echo or hidden-scan.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for a preset; overrides the seed of a config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (must be absent or empty); receives flows.csv,
    /// manifest.json and scenario.toml.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ParseArgs {
    /// Input flow CSV.
    #[arg(long)]
    input: PathBuf,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Output flow CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PairingArg {
    FirstSeen,
    LowPortServer,
}

impl From<PairingArg> for Pairing {
    fn from(p: PairingArg) -> Self {
        match p {
            PairingArg::FirstSeen => Pairing::FirstSeen,
            PairingArg::LowPortServer => Pairing::LowPortServer,
        }
    }
}

#[derive(Args, Debug)]
struct MergeArgs {
    /// Input unidirectional flow CSV.
    #[arg(long)]
    input: PathBuf,
    /// Rule choosing the source side of a merged conversation.
    #[arg(long, value_enum, default_value = "first-seen")]
    pairing: PairingArg,
    /// Seconds of slack between the two directions' start times.
    #[arg(long, default_value_t = 5.0)]
    tolerance: f64,
    /// Do not widen the matching window by the earlier record's duration.
    #[arg(long)]
    no_extend: bool,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Output bidirectional flow CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    /// Input flow CSV.
    #[arg(long)]
    input: PathBuf,
    /// Feature dictionary TOML; the built-in dictionary when omitted.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Drop flows matching this predicate before counting (repeatable).
    #[arg(long = "exclude")]
    exclude: Vec<String>,
    /// Window grid start (YYYYMMDDhhmmss); requires --end.
    #[arg(long, requires = "end")]
    start: Option<Timestamp>,
    /// Window grid end, exclusive.
    #[arg(long, requires = "start")]
    end: Option<Timestamp>,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Output matrix CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DetectorArg {
    Msnm,
    Ocsvm,
}

#[derive(Args, Debug)]
struct MatrixInput {
    /// Observation matrix CSV.
    #[arg(long)]
    matrix: PathBuf,
    /// Window length of the matrix in seconds.
    #[arg(long, default_value_t = 60)]
    window: i64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: MatrixInput,
    /// Detector to fit.
    #[arg(long, value_enum)]
    detector: DetectorArg,
    /// Restrict calibration to windows starting at or after this time.
    #[arg(long, requires = "until")]
    since: Option<Timestamp>,
    /// Restrict calibration to windows starting before this time.
    #[arg(long, requires = "since")]
    until: Option<Timestamp>,
    /// Calibration windows to leave out (repeatable).
    #[arg(long = "exclude-window")]
    exclude_windows: Vec<Timestamp>,
    /// MSNM: fixed number of principal components.
    #[arg(long, conflicts_with = "variance")]
    components: Option<usize>,
    /// MSNM: smallest explained-variance fraction (default 0.95).
    #[arg(long)]
    variance: Option<f64>,
    /// MSNM: percentile of calibration statistics used as control limits.
    #[arg(long, default_value_t = 99.0)]
    percentile: f64,
    /// OCSVM: upper bound on the outlier fraction.
    #[arg(long, default_value_t = 0.02)]
    nu: f64,
    /// OCSVM: RBF gamma; median heuristic when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    /// OCSVM: KKT tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// OCSVM: largest calibration set after stride subsampling.
    #[arg(long, default_value_t = 5000)]
    max_calibration: usize,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: MatrixInput,
    /// Output scores CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Scores CSV from `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Matrix for feature statistics (boxplots, t-tests, time series).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Window length of the matrix in seconds.
    #[arg(long, default_value_t = 60)]
    window: i64,
    /// Feature for statistics and time series (repeatable).
    #[arg(long = "feature", requires = "matrix")]
    features: Vec<String>,
    /// Time-series range start; the whole matrix when omitted.
    #[arg(long, requires = "to")]
    from: Option<Timestamp>,
    /// Time-series range end, exclusive.
    #[arg(long, requires = "from")]
    to: Option<Timestamp>,
    /// Output directory (must be absent or empty).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("reference").required(true).args(["reference_matrix", "reference_model"])))]
#[command(group(clap::ArgGroup::new("selection").required(true).args(["attack", "from", "window_at"])))]
struct DiagnoseArgs {
    #[command(flatten)]
    input: MatrixInput,
    /// Reference matrix; its NORMAL windows give the autoscale statistics.
    #[arg(long)]
    reference_matrix: Option<PathBuf>,
    /// Fitted model whose stored autoscale statistics are the reference.
    #[arg(long)]
    reference_model: Option<PathBuf>,
    /// Select windows labelled with this attack type.
    #[arg(long)]
    attack: Option<String>,
    /// Select windows starting at or after this time.
    #[arg(long, requires = "to")]
    from: Option<Timestamp>,
    /// Select windows starting before this time.
    #[arg(long, requires = "from")]
    to: Option<Timestamp>,
    /// Select individual windows by start time (repeatable).
    #[arg(long = "window-at")]
    window_at: Vec<Timestamp>,
    /// Number of ranked features printed.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Output bar-plot CSV `feature,accumulated`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the full report (with per-observation rows) as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("reference").required(true).args(["reference_matrix", "reference_model"])))]
struct AuditArgs {
    #[command(flatten)]
    input: MatrixInput,
    /// Scores CSV aligned with the matrix windows.
    #[arg(long)]
    scores: PathBuf,
    /// Reference matrix; its NORMAL windows give the autoscale statistics.
    #[arg(long)]
    reference_matrix: Option<PathBuf>,
    /// Fitted model whose stored autoscale statistics are the reference.
    #[arg(long)]
    reference_model: Option<PathBuf>,
    /// Flag background windows above this percentile of background scores.
    #[arg(long, conflicts_with = "absolute", default_value_t = 99.9)]
    percentile: f64,
    /// Flag background windows above this absolute score.
    #[arg(long)]
    absolute: Option<f64>,
    /// Largest window-index gap inside one period.
    #[arg(long, default_value_t = 1)]
    max_gap: usize,
    /// Features tested per period.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Output audit report JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment plan TOML.
    #[arg(long)]
    plan: PathBuf,
    /// Output directory; overrides the plan's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the plan's `workers`.
    #[arg(long)]
    workers: Option<usize>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowqual: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
