//! Flow-record anomaly detection with data-quality diagnosis.
//!
//! The crate covers the whole path from labelled flow records to evidence
//! about dataset quality: flow parsing and bidirectional merging
//! ([`flow`]), feature-as-a-counter windows ([`faac`]), a PCA-based
//! multivariate detector ([`msnm`]) and a one-class SVM ([`ocsvm`]), ROC/AUC
//! and statistical tests ([`evaluation`]), U-Squared diagnosis
//! ([`diagnosis`]), background-label auditing ([`audit`]), a deterministic
//! synthetic traffic generator ([`synth`]) and the experiment pipeline that
//! ties them together ([`pipeline`]).

pub mod audit;
pub mod diagnosis;
pub mod error;
pub mod evaluation;
pub mod faac;
pub mod flow;
pub mod msnm;
pub mod ocsvm;
pub mod pipeline;
pub mod scaling;
pub mod stats;
pub mod synth;
pub mod time;

pub use error::{Error, ErrorKind, Result};
pub use time::Timestamp;
