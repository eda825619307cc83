//! Evaluation: ROC curves and AUC (pooled and per attack type), Welch
//! t-tests, boxplot summaries and feature time-series export.

mod boxplot;
mod roc;
mod timeseries;
mod ttest;

pub use boxplot::{boxplot_stats, BoxplotStats};
pub use roc::{
    auc_per_attack, mann_whitney_auc, roc_auc, write_auc_summary, write_roc_csv, AucRow, RocCurve,
    AUC_SUMMARY_HEADER, ROC_HEADER,
};
pub use timeseries::{export_timeseries, read_timeseries, write_timeseries, TimeSeries};
pub use ttest::{welch_ttest, Alternative, TTestResult};
