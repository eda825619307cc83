//! Flow-level exclusion predicates.
//!
//! A predicate is a conjunction of clauses joined by `and`:
//!
//! ```text
//! label = anomaly
//! dst_port in {6667, 6697}
//! start_time in [20160601000000, 20160701000000) and protocol = tcp
//! addr in {10.0.0.7}
//! ```
//!
//! Fields: `start_time`, `src_port`, `dst_port`, `port` (either side),
//! `src_addr`, `dst_addr`, `addr` (either side), `protocol`, `label`,
//! `attack_type`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::{AttackType, FlowRecord, LabelKind, Protocol};
use crate::error::{Error, Result};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq)]
enum Clause {
    Time { start: Timestamp, end: Timestamp },
    SrcPort(BTreeSet<u16>),
    DstPort(BTreeSet<u16>),
    AnyPort(BTreeSet<u16>),
    SrcAddr(BTreeSet<String>),
    DstAddr(BTreeSet<String>),
    AnyAddr(BTreeSet<String>),
    Protocol(BTreeSet<Protocol>),
    Label(LabelKind),
    Attack(BTreeSet<AttackType>),
}

impl Clause {
    fn matches(&self, f: &FlowRecord) -> bool {
        match self {
            Clause::Time { start, end } => f.start_time >= *start && f.start_time < *end,
            Clause::SrcPort(s) => s.contains(&f.src_port),
            Clause::DstPort(s) => s.contains(&f.dst_port),
            Clause::AnyPort(s) => s.contains(&f.src_port) || s.contains(&f.dst_port),
            Clause::SrcAddr(s) => s.contains(&f.src_addr),
            Clause::DstAddr(s) => s.contains(&f.dst_addr),
            Clause::AnyAddr(s) => s.contains(&f.src_addr) || s.contains(&f.dst_addr),
            Clause::Protocol(s) => s.contains(&f.protocol),
            Clause::Label(k) => f.label.kind() == *k,
            Clause::Attack(s) => f.label.attack_type().is_some_and(|t| s.contains(&t)),
        }
    }
}

/// Conjunction of field clauses over [`FlowRecord`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPredicate {
    source: String,
    clauses: Vec<Clause>,
}

impl FlowPredicate {
    pub fn matches(&self, f: &FlowRecord) -> bool {
        self.clauses.iter().all(|c| c.matches(f))
    }
}

impl fmt::Display for FlowPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for FlowPredicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut clauses = Vec::new();
        for part in split_and(s) {
            clauses.push(parse_clause(part.trim())?);
        }
        if clauses.is_empty() {
            return Err(Error::Config("empty flow predicate".into()));
        }
        Ok(FlowPredicate {
            source: s.trim().to_string(),
            clauses,
        })
    }
}

fn split_and(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut rest = s;
    loop {
        let lower = rest.to_ascii_lowercase();
        match lower.find(" and ").or_else(|| lower.find("&&")) {
            Some(idx) => {
                let sep = if lower[idx..].starts_with("&&") { 2 } else { 5 };
                parts.push(&rest[..idx]);
                rest = &rest[idx + sep..];
            }
            None => {
                if !rest.trim().is_empty() {
                    parts.push(rest);
                }
                return parts;
            }
        }
    }
}

fn parse_clause(s: &str) -> Result<Clause> {
    let (field, op, value) = split_clause(s)?;
    let bad = |msg: String| Error::Config(format!("predicate clause `{s}`: {msg}"));
    match field.as_str() {
        "start_time" | "time" => {
            let v = value.trim();
            if op != "in" || !v.starts_with('[') || !v.ends_with(')') {
                return Err(bad(
                    "time clause must be `start_time in [start, end)`".into()
                ));
            }
            let inner = &v[1..v.len() - 1];
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| bad("expected two timestamps".into()))?;
            let start: Timestamp = a.parse().map_err(|e: Error| bad(e.to_string()))?;
            let end: Timestamp = b.parse().map_err(|e: Error| bad(e.to_string()))?;
            if start >= end {
                return Err(bad("time range start must precede end".into()));
            }
            Ok(Clause::Time { start, end })
        }
        "src_port" | "dst_port" | "port" => {
            let set = parse_set(&value, |t| {
                t.parse::<u16>()
                    .map_err(|_| format!("port {t:?} not in 0..=65535"))
            })
            .map_err(bad)?;
            Ok(match field.as_str() {
                "src_port" => Clause::SrcPort(set),
                "dst_port" => Clause::DstPort(set),
                _ => Clause::AnyPort(set),
            })
        }
        "src_addr" | "dst_addr" | "addr" => {
            let set = parse_set(&value, |t| Ok(t.to_string())).map_err(bad)?;
            Ok(match field.as_str() {
                "src_addr" => Clause::SrcAddr(set),
                "dst_addr" => Clause::DstAddr(set),
                _ => Clause::AnyAddr(set),
            })
        }
        "protocol" => Ok(Clause::Protocol(
            parse_set(&value, |t| t.parse::<Protocol>().map_err(|e| e.to_string())).map_err(bad)?,
        )),
        "label" => match value.trim().to_ascii_lowercase().as_str() {
            "anomaly" => Ok(Clause::Label(LabelKind::Anomaly)),
            "background" => Ok(Clause::Label(LabelKind::Background)),
            other => Err(bad(format!("unknown label {other:?}"))),
        },
        "attack_type" => Ok(Clause::Attack(
            parse_set(&value, |t| {
                t.parse::<AttackType>().map_err(|e| e.to_string())
            })
            .map_err(bad)?,
        )),
        other => Err(bad(format!("unknown flow field {other:?}"))),
    }
}

fn split_clause(s: &str) -> Result<(String, &'static str, String)> {
    if let Some((f, v)) = s.split_once(" in ") {
        return Ok((f.trim().to_ascii_lowercase(), "in", v.trim().to_string()));
    }
    if let Some((f, v)) = s.split_once('=') {
        return Ok((f.trim().to_ascii_lowercase(), "=", v.trim().to_string()));
    }
    Err(Error::Config(format!(
        "predicate clause `{s}` must be `<field> = <value>` or `<field> in <set>`"
    )))
}

fn parse_set<T: Ord>(
    value: &str,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<BTreeSet<T>, String> {
    let v = value.trim();
    let inner = if v.starts_with('{') && v.ends_with('}') {
        &v[1..v.len() - 1]
    } else {
        v
    };
    let mut set = BTreeSet::new();
    for tok in inner.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        set.insert(parse(tok)?);
    }
    if set.is_empty() {
        return Err("empty value set".into());
    }
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct Exclusion {
    pub kept: Vec<FlowRecord>,
    pub removed: usize,
}

/// Drops every flow matching `predicate`, preserving the order of the rest.
pub fn exclude_flows(flows: &[FlowRecord], predicate: &FlowPredicate) -> Exclusion {
    let kept: Vec<FlowRecord> = flows
        .iter()
        .filter(|f| !predicate.matches(f))
        .cloned()
        .collect();
    Exclusion {
        removed: flows.len() - kept.len(),
        kept,
    }
}
