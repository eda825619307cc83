//! Experiment orchestration: build dataset variants from a plan, fit and
//! score every (variant, detector) cell and write the evaluation products.

mod plan;
mod run;
mod scores;

pub use plan::{Detector, ExperimentPlan, VariantSpec};
pub use run::{prepare_variants, run_plan, CellFailure, PlanReport, PreparedVariant};
pub use scores::{read_scores, write_scores, DetectorModel, ScoreTable};
