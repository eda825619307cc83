//! Pairing of unidirectional flows into bidirectional records.
//!
//! Records are visited in start-time order (input order breaks ties). Each
//! unpaired record takes the earliest later record with the exact reversed
//! 5-tuple whose start lies within the tolerance window; every record merges
//! at most once.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{FlowLabel, FlowRecord, Protocol};
use crate::error::{Error, Result};

/// How the source side of a merged conversation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// The earlier record's source endpoint is the merged source.
    FirstSeen,
    /// The endpoint with the lower port is taken as the server, so the merged
    /// source is the endpoint with the higher port. Equal ports fall back to
    /// `FirstSeen`.
    LowPortServer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergePolicy {
    pub pairing: Pairing,
    /// Seconds of slack allowed between the two start times.
    pub time_tolerance: f64,
    /// Widen the window by the earlier record's duration.
    #[serde(default = "default_true")]
    pub extend_by_duration: bool,
}

fn default_true() -> bool {
    true
}

impl MergePolicy {
    pub fn new(pairing: Pairing) -> Self {
        MergePolicy {
            pairing,
            time_tolerance: 5.0,
            extend_by_duration: true,
        }
    }

    fn window_for(&self, rec: &FlowRecord) -> f64 {
        if self.extend_by_duration {
            self.time_tolerance + rec.duration
        } else {
            self.time_tolerance
        }
    }
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub flows: Vec<FlowRecord>,
    pub merged_pairs: usize,
}

type Key<'a> = (&'a str, &'a str, u16, u16, Protocol);

fn key(r: &FlowRecord) -> Key<'_> {
    (&r.src_addr, &r.dst_addr, r.src_port, r.dst_port, r.protocol)
}

fn reverse_key(r: &FlowRecord) -> Key<'_> {
    (&r.dst_addr, &r.src_addr, r.dst_port, r.src_port, r.protocol)
}

pub fn merge_bidirectional(flows: &[FlowRecord], policy: &MergePolicy) -> Result<MergeOutcome> {
    if !(policy.time_tolerance >= 0.0) {
        return Err(Error::Config(format!(
            "merge time_tolerance must be >= 0, got {}",
            policy.time_tolerance
        )));
    }
    if let Some(pos) = flows.iter().position(|f| !f.is_unidirectional()) {
        return Err(Error::InvalidInput(format!(
            "flow #{pos} already carries reverse counters; merge expects unidirectional input"
        )));
    }

    let mut order: Vec<usize> = (0..flows.len()).collect();
    order.sort_by_key(|&i| flows[i].start_time);

    // Positions (into `order`) of every record, grouped by 5-tuple.
    let mut by_key: HashMap<Key<'_>, (Vec<usize>, usize)> = HashMap::new();
    for (pos, &i) in order.iter().enumerate() {
        by_key.entry(key(&flows[i])).or_default().0.push(pos);
    }

    let mut used = vec![false; order.len()];
    let mut out = Vec::with_capacity(flows.len());
    let mut merged_pairs = 0;

    for pos in 0..order.len() {
        if used[pos] {
            continue;
        }
        used[pos] = true;
        let rec = &flows[order[pos]];
        let limit = rec.start_time.0 as f64 + policy.window_for(rec);

        let mut partner = None;
        if let Some((positions, cursor)) = by_key.get_mut(&reverse_key(rec)) {
            while *cursor < positions.len()
                && (positions[*cursor] <= pos || used[positions[*cursor]])
            {
                *cursor += 1;
            }
            for &cand in &positions[*cursor..] {
                if used[cand] || cand <= pos {
                    continue;
                }
                if flows[order[cand]].start_time.0 as f64 > limit {
                    break;
                }
                partner = Some(cand);
                break;
            }
        }

        match partner {
            Some(cand) => {
                used[cand] = true;
                merged_pairs += 1;
                out.push(combine(rec, &flows[order[cand]], policy.pairing));
            }
            None => out.push(rec.clone()),
        }
    }

    out.sort_by_key(|f| f.start_time);
    Ok(MergeOutcome {
        flows: out,
        merged_pairs,
    })
}

/// `first` is the earlier record (or the earlier in input order on ties).
fn combine(first: &FlowRecord, second: &FlowRecord, pairing: Pairing) -> FlowRecord {
    let first_is_source = match pairing {
        Pairing::FirstSeen => true,
        Pairing::LowPortServer => first.src_port >= first.dst_port,
    };
    let (src, rev) = if first_is_source {
        (first, second)
    } else {
        (second, first)
    };
    let end = first.end_time_secs().max(second.end_time_secs());
    let label = match (src.label, rev.label) {
        (l @ FlowLabel::Anomaly(_), _) => l,
        (_, l) => l,
    };
    FlowRecord {
        start_time: first.start_time,
        duration: end - first.start_time.0 as f64,
        src_addr: src.src_addr.clone(),
        dst_addr: src.dst_addr.clone(),
        src_port: src.src_port,
        dst_port: src.dst_port,
        protocol: src.protocol,
        fwd_packets: src.fwd_packets,
        fwd_bytes: src.fwd_bytes,
        rev_packets: rev.fwd_packets,
        rev_bytes: rev.fwd_bytes,
        label,
    }
}
