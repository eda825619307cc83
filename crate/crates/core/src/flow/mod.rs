//! Canonical flow records and the operations applied before featurization:
//! CSV parsing, bidirectional merging and flow-level exclusion.

mod csv;
mod merge;
mod predicate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::time::Timestamp;

pub use self::csv::{
    parse_flow_csv, read_flow_file, write_flow_csv, write_flow_file, ParsedFlows, FLOW_CSV_HEADER,
};
pub use self::merge::{merge_bidirectional, MergeOutcome, MergePolicy, Pairing};
pub use self::predicate::{exclude_flows, Exclusion, FlowPredicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
    Other,
}

impl Protocol {
    /// Protocols that carry no port numbers.
    pub fn is_portless(self) -> bool {
        matches!(self, Protocol::Icmp | Protocol::Other)
    }

    /// Numeric code used when a protocol is matched as a feature value.
    pub fn code(self) -> u64 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
            Protocol::Icmp => 1,
            Protocol::Other => 255,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
            Protocol::Icmp => "icmp",
            Protocol::Other => "other",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            "icmp" => Ok(Protocol::Icmp),
            "other" => Ok(Protocol::Other),
            other => Err(Error::InvalidInput(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Injected attack families of the test capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackType {
    Dos,
    Scan11,
    Scan44,
    Nerisbotnet,
    Other,
}

impl AttackType {
    pub const ALL: [AttackType; 5] = [
        AttackType::Dos,
        AttackType::Scan11,
        AttackType::Scan44,
        AttackType::Nerisbotnet,
        AttackType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackType::Dos => "dos",
            AttackType::Scan11 => "scan11",
            AttackType::Scan44 => "scan44",
            AttackType::Nerisbotnet => "nerisbotnet",
            AttackType::Other => "other",
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dos" => Ok(AttackType::Dos),
            "scan11" => Ok(AttackType::Scan11),
            "scan44" => Ok(AttackType::Scan44),
            "nerisbotnet" => Ok(AttackType::Nerisbotnet),
            "other" => Ok(AttackType::Other),
            other => Err(Error::InvalidInput(format!(
                "unknown attack type {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Background,
    Anomaly,
}

/// Ground-truth label of a single flow. An attack type exists exactly when
/// the flow is an anomaly, which the enum shape enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FlowLabel {
    #[default]
    Background,
    Anomaly(AttackType),
}

impl FlowLabel {
    pub fn kind(self) -> LabelKind {
        match self {
            FlowLabel::Background => LabelKind::Background,
            FlowLabel::Anomaly(_) => LabelKind::Anomaly,
        }
    }

    pub fn attack_type(self) -> Option<AttackType> {
        match self {
            FlowLabel::Background => None,
            FlowLabel::Anomaly(t) => Some(t),
        }
    }

    pub fn is_anomaly(self) -> bool {
        matches!(self, FlowLabel::Anomaly(_))
    }
}

/// One flow, possibly the merge of both directions of a conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub start_time: Timestamp,
    /// Seconds, non-negative.
    pub duration: f64,
    pub src_addr: String,
    pub dst_addr: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub fwd_packets: u64,
    pub fwd_bytes: u64,
    pub rev_packets: u64,
    pub rev_bytes: u64,
    pub label: FlowLabel,
}

impl FlowRecord {
    pub fn is_unidirectional(&self) -> bool {
        self.rev_packets == 0 && self.rev_bytes == 0
    }

    pub fn end_time_secs(&self) -> f64 {
        self.start_time.0 as f64 + self.duration
    }

    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(format!(
                "duration {} must be a non-negative number",
                self.duration
            ));
        }
        if (self.src_port == 0 || self.dst_port == 0) && !self.protocol.is_portless() {
            return Err(format!(
                "port 0 is only valid for icmp/other, not {}",
                self.protocol
            ));
        }
        Ok(())
    }
}
