//! Feature-as-a-counter featurization: every feature counts how often a flow
//! property occurs (or sums a flow field) inside a fixed time window.

mod config;
mod matrix;

use crate::error::{Error, Result};
use crate::flow::{FlowLabel, FlowRecord};
use crate::time::Timestamp;

pub use self::config::{
    FeatureConfig, FeatureField, FeatureSpec, Matcher, Weight, SERVICE_PORTS, UNBOUNDED,
};
pub use self::matrix::{ObservationMatrix, WindowKind, WindowLabel};

/// Per-field matching plan: explicit matchers first, then the catch-all.
struct FieldPlan {
    field: FeatureField,
    direct: Vec<usize>,
    catch_all: Option<usize>,
}

fn plan(config: &FeatureConfig) -> Vec<FieldPlan> {
    let mut plans: Vec<FieldPlan> = Vec::new();
    for (j, spec) in config.specs.iter().enumerate() {
        let idx = match plans.iter().position(|p| p.field == spec.field) {
            Some(i) => i,
            None => {
                plans.push(FieldPlan {
                    field: spec.field,
                    direct: Vec::new(),
                    catch_all: None,
                });
                plans.len() - 1
            }
        };
        if spec.matcher.is_catch_all() {
            plans[idx].catch_all = Some(j);
        } else {
            plans[idx].direct.push(j);
        }
    }
    plans
}

/// Builds the counter matrix for time-sorted `flows`.
///
/// With `range = Some((start, end))` the window grid covers `[start, end)`
/// exactly (start aligned down, end aligned up) and flows outside it are
/// rejected; otherwise the grid spans the first to the last flow. Windows
/// without flows are emitted as all-zero NORMAL rows.
pub fn featurize(
    flows: &[FlowRecord],
    config: &FeatureConfig,
    range: Option<(Timestamp, Timestamp)>,
) -> Result<ObservationMatrix> {
    config.validate()?;
    let wl = config.window_length;
    if let Some(i) = (1..flows.len()).find(|&i| flows[i].start_time < flows[i - 1].start_time) {
        return Err(Error::InvalidInput(format!(
            "flows are not time-sorted at record #{i} ({})",
            flows[i].start_time
        )));
    }

    let (first, end) = match range {
        Some((start, end)) => {
            if start >= end {
                return Err(Error::Config(format!(
                    "featurize range {start}..{end} is empty"
                )));
            }
            if let Some(f) = flows.first() {
                if f.start_time < start {
                    return Err(Error::InvalidInput(format!(
                        "flow at {} precedes range start {start}",
                        f.start_time
                    )));
                }
            }
            if let Some(f) = flows.last() {
                if f.start_time >= end {
                    return Err(Error::InvalidInput(format!(
                        "flow at {} is past range end {end}",
                        f.start_time
                    )));
                }
            }
            let aligned_end = Timestamp((end.0 + wl - 1).div_euclid(wl) * wl);
            (start.align_down(wl), aligned_end)
        }
        None => match (flows.first(), flows.last()) {
            (Some(a), Some(b)) => (
                a.start_time.align_down(wl),
                b.start_time.align_down(wl).plus(wl),
            ),
            _ => (Timestamp(0), Timestamp(0)),
        },
    };

    let n_windows = ((end.0 - first.0) / wl).max(0) as usize;
    let p = config.specs.len();
    let mut counts = vec![0.0; n_windows * p];
    let mut labels = vec![WindowLabel::normal(); n_windows];
    let plans = plan(config);

    for flow in flows {
        let w = ((flow.start_time.0 - first.0).div_euclid(wl)) as usize;
        let row = &mut counts[w * p..(w + 1) * p];
        for fp in &plans {
            let v = fp.field.value(flow);
            let mut hit = false;
            for &j in &fp.direct {
                if config.specs[j].matcher.matches(v) {
                    hit = true;
                    row[j] += weight_of(config.specs[j].weight, v);
                }
            }
            if !hit {
                if let Some(j) = fp.catch_all {
                    row[j] += weight_of(config.specs[j].weight, v);
                }
            }
        }
        if let FlowLabel::Anomaly(t) = flow.label {
            labels[w].insert(t);
        }
    }

    let starts = (0..n_windows).map(|i| first.plus(i as i64 * wl)).collect();
    ObservationMatrix::new(wl, starts, config.feature_names(), counts, labels)
}

fn weight_of(weight: Weight, value: u64) -> f64 {
    match weight {
        Weight::CountFlows => 1.0,
        Weight::SumField => value as f64,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::flow::{exclude_flows, AttackType, FlowPredicate, Protocol};

    fn flow(t: i64, sp: u16, dp: u16, label: FlowLabel) -> FlowRecord {
        FlowRecord {
            start_time: Timestamp(t),
            duration: 0.2,
            src_addr: "10.0.0.1".into(),
            dst_addr: "10.0.0.9".into(),
            src_port: sp,
            dst_port: dp,
            protocol: if dp == 53 {
                Protocol::Udp
            } else {
                Protocol::Tcp
            },
            fwd_packets: 1 + (t as u64 % 5),
            fwd_bytes: 40 + (t as u64 % 7) * 300,
            rev_packets: 0,
            rev_bytes: 0,
            label,
        }
    }

    fn http_only() -> FeatureConfig {
        FeatureConfig::new(
            vec![FeatureSpec::new(
                "dport_http",
                FeatureField::DstPort,
                Matcher::Exact(80),
                Weight::CountFlows,
            )],
            60,
        )
        .unwrap()
    }

    #[test]
    fn counts_matching_flows() {
        let flows = vec![
            flow(60, 50000, 80, FlowLabel::Background),
            flow(70, 50001, 443, FlowLabel::Background),
            flow(100, 50002, 80, FlowLabel::Background),
        ];
        let m = featurize(&flows, &http_only(), None).unwrap();
        assert_eq!(m.n_windows(), 1);
        assert_eq!(m.row(0), &[2.0]);
    }

    #[test]
    fn botnet_flow_marks_window() {
        let flows = vec![
            flow(0, 50000, 80, FlowLabel::Background),
            flow(5, 2000, 6667, FlowLabel::Anomaly(AttackType::Nerisbotnet)),
            flow(9, 50001, 53, FlowLabel::Background),
        ];
        let m = featurize(&flows, &FeatureConfig::default_dictionary(), None).unwrap();
        let l = &m.window_labels()[0];
        assert_eq!(l.kind(), WindowKind::Anomalous);
        assert_eq!(l.attack_types(), &BTreeSet::from([AttackType::Nerisbotnet]));
    }

    #[test]
    fn empty_minute_is_zero_and_normal() {
        let flows = vec![
            flow(0, 50000, 80, FlowLabel::Anomaly(AttackType::Dos)),
            flow(130, 50000, 80, FlowLabel::Background),
        ];
        let m = featurize(&flows, &FeatureConfig::default_dictionary(), None).unwrap();
        assert_eq!(m.n_windows(), 3);
        assert!(m.row(1).iter().all(|&v| v == 0.0));
        assert!(m.window_labels()[1].is_normal());
        assert!(!m.window_labels()[0].is_normal());
    }

    #[test]
    fn explicit_range_pads_and_rejects_outliers() {
        let flows = vec![flow(130, 50000, 80, FlowLabel::Background)];
        let m = featurize(&flows, &http_only(), Some((Timestamp(0), Timestamp(300)))).unwrap();
        assert_eq!(m.n_windows(), 5);
        assert_eq!(m.column(0), vec![0., 0., 1., 0., 0.]);
        assert!(featurize(&flows, &http_only(), Some((Timestamp(0), Timestamp(120)))).is_err());
        assert!(featurize(&flows, &http_only(), Some((Timestamp(180), Timestamp(300)))).is_err());
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let flows = vec![
            flow(100, 50000, 80, FlowLabel::Background),
            flow(10, 50000, 80, FlowLabel::Background),
        ];
        assert!(featurize(&flows, &http_only(), None).is_err());
    }

    #[test]
    fn sum_field_weights() {
        let cfg = FeatureConfig::new(
            vec![FeatureSpec::new(
                "bytes",
                FeatureField::FwdBytes,
                Matcher::Range([0, UNBOUNDED]),
                Weight::SumField,
            )],
            60,
        )
        .unwrap();
        let mut a = flow(0, 50000, 80, FlowLabel::Background);
        a.fwd_bytes = 100;
        let mut b = flow(1, 50000, 80, FlowLabel::Background);
        b.fwd_bytes = 250;
        let m = featurize(&[a, b], &cfg, None).unwrap();
        assert_eq!(m.row(0), &[350.0]);
    }

    #[test]
    fn dropping_equals_refeaturizing_without_specs() {
        let mut flows = Vec::new();
        for i in 0..40 {
            let dp = [80, 6667, 443, 53, 23, 6667][i % 6];
            let sp = if i % 3 == 0 { 6667 } else { 50000 + i as u16 };
            flows.push(flow(i as i64 * 7, sp, dp, FlowLabel::Background));
        }
        let full = FeatureConfig::default_dictionary();
        let dropped = featurize(&flows, &full, None)
            .unwrap()
            .drop_features(&["sport_irc", "dport_irc"])
            .unwrap();
        assert_eq!(dropped.n_features(), 32);
        // Without the IRC specs, port 6667 falls through to the catch-alls,
        // so the equality oracle is over the remaining explicit columns and
        // the catch-alls differ exactly by the IRC counts.
        let reduced_cfg = full.without(&["sport_irc", "dport_irc"]).unwrap();
        let refeat = featurize(&flows, &reduced_cfg, None).unwrap();
        assert_eq!(refeat.feature_names(), dropped.feature_names());
        let full_m = featurize(&flows, &full, None).unwrap();
        for i in 0..dropped.n_windows() {
            for (j, name) in dropped.feature_names().iter().enumerate() {
                let expect = match name.as_str() {
                    "dport_other" => {
                        dropped.get(i, j)
                            + full_m.get(i, full_m.feature_index("dport_irc").unwrap())
                    }
                    "sport_other" => {
                        dropped.get(i, j)
                            + full_m.get(i, full_m.feature_index("sport_irc").unwrap())
                    }
                    _ => dropped.get(i, j),
                };
                assert_eq!(refeat.get(i, j), expect, "{name} row {i}");
            }
        }
        // With a dictionary whose IRC specs are not backstopped by catch-alls
        // the two routes agree exactly.
        let no_catch: Vec<FeatureSpec> = full
            .specs
            .iter()
            .filter(|s| !s.matcher.is_catch_all())
            .cloned()
            .collect();
        let cfg = FeatureConfig::new(no_catch, 60).unwrap();
        let a = featurize(&flows, &cfg, None)
            .unwrap()
            .drop_features(&["sport_irc", "dport_irc"])
            .unwrap();
        let b = featurize(
            &flows,
            &cfg.without(&["sport_irc", "dport_irc"]).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flow_level_and_observation_level_exclusion_differ() {
        // Ten flows over three minutes; the SPAM episode (smtp from one
        // host) sits in minute 1 alongside two ordinary flows.
        let mut flows = vec![
            flow(5, 50000, 80, FlowLabel::Background),
            flow(20, 50001, 443, FlowLabel::Background),
            flow(61, 50002, 80, FlowLabel::Background),
            flow(62, 40000, 25, FlowLabel::Background),
            flow(63, 40001, 25, FlowLabel::Background),
            flow(64, 40002, 25, FlowLabel::Background),
            flow(90, 50003, 53, FlowLabel::Background),
            flow(121, 50004, 80, FlowLabel::Background),
            flow(150, 50005, 80, FlowLabel::Background),
            flow(170, 50006, 443, FlowLabel::Background),
        ];
        for f in &mut flows[3..6] {
            f.src_addr = "10.6.6.6".into();
        }
        let cfg = FeatureConfig::default_dictionary();
        let spam: FlowPredicate = "src_addr = 10.6.6.6 and dst_port = 25".parse().unwrap();

        let flow_level = featurize(&exclude_flows(&flows, &spam).kept, &cfg, None).unwrap();
        let (obs_level, missing) = featurize(&flows, &cfg, None)
            .unwrap()
            .exclude_observations(&[Timestamp(60)]);
        assert!(missing.is_empty());

        assert_eq!(flow_level.n_windows(), 3);
        assert_eq!(obs_level.n_windows(), 2);
        let total = cfg
            .specs
            .iter()
            .position(|s| s.name == "flows_total")
            .unwrap();
        assert_eq!(flow_level.get(1, total), 2.0);
        assert_eq!(
            flow_level.get(
                1,
                cfg.specs
                    .iter()
                    .position(|s| s.name == "dport_smtp")
                    .unwrap()
            ),
            0.0
        );
        assert_eq!(obs_level.window_starts(), &[Timestamp(0), Timestamp(120)]);
        assert_eq!(flow_level.row(0), obs_level.row(0));
        assert_eq!(flow_level.row(2), obs_level.row(1));
    }

    fn arb_flows() -> impl Strategy<Value = Vec<FlowRecord>> {
        let ports = prop_oneof![
            Just(80u16),
            Just(443),
            Just(6667),
            Just(23),
            Just(70),
            1024u16..65535
        ];
        prop::collection::vec((0i64..600, ports, 1024u16..65535, 0u8..3), 1..120).prop_map(|v| {
            let mut flows: Vec<FlowRecord> = v
                .into_iter()
                .map(|(t, dp, sp, proto)| {
                    let mut f = flow(t, sp, dp, FlowLabel::Background);
                    f.protocol = [Protocol::Tcp, Protocol::Udp, Protocol::Tcp][proto as usize];
                    f
                })
                .collect();
            flows.sort_by_key(|f| f.start_time);
            flows
        })
    }

    proptest! {
        #[test]
        fn catch_all_partition_counts_every_flow(flows in arb_flows()) {
            let cfg = FeatureConfig::default_dictionary();
            let m = featurize(&flows, &cfg, None).unwrap();
            for field in [FeatureField::DstPort, FeatureField::SrcPort, FeatureField::Protocol] {
                let cols: Vec<usize> = cfg.specs.iter().enumerate()
                    .filter(|(_, s)| s.field == field && s.weight == Weight::CountFlows)
                    .map(|(j, _)| j).collect();
                for i in 0..m.n_windows() {
                    let start = m.window_starts()[i];
                    let n = flows.iter().filter(|f| f.start_time.align_down(60) == start).count();
                    let s: f64 = cols.iter().map(|&j| m.get(i, j)).sum();
                    prop_assert_eq!(s, n as f64);
                }
            }
        }

        #[test]
        fn permutation_within_window_is_invariant(flows in arb_flows(), seed in 0u64..1000) {
            let cfg = FeatureConfig::default_dictionary();
            let base = featurize(&flows, &cfg, None).unwrap();
            // Reverse the order of flows that share a window, keeping the
            // global sort on window starts.
            let mut shuffled = flows.clone();
            shuffled.sort_by_key(|f| (f.start_time.align_down(60), std::cmp::Reverse((f.src_port as u64 * 31 + seed) % 97)));
            for f in shuffled.iter_mut() {
                f.start_time = f.start_time.align_down(60);
            }
            let mut aligned = flows.clone();
            for f in aligned.iter_mut() {
                f.start_time = f.start_time.align_down(60);
            }
            prop_assert_eq!(featurize(&shuffled, &cfg, None).unwrap(), featurize(&aligned, &cfg, None).unwrap());
            prop_assert_eq!(featurize(&aligned, &cfg, None).unwrap(), base);
        }

        #[test]
        fn featurize_distributes_over_concat(a in arb_flows(), b in arb_flows()) {
            let cfg = FeatureConfig::default_dictionary();
            let shift = 600;
            let b: Vec<FlowRecord> = b.into_iter().map(|mut f| { f.start_time = f.start_time.plus(shift); f }).collect();
            let left = featurize(&a, &cfg, Some((Timestamp(0), Timestamp(shift)))).unwrap();
            let right = featurize(&b, &cfg, Some((Timestamp(shift), Timestamp(2 * shift)))).unwrap();
            let mut all = a.clone();
            all.extend(b.iter().cloned());
            let whole = featurize(&all, &cfg, Some((Timestamp(0), Timestamp(2 * shift)))).unwrap();
            prop_assert_eq!(left.append_rows(&right).unwrap(), whole);
        }

        #[test]
        fn selection_commutes_with_time_filter(flows in arb_flows(), lo in 0i64..5, len in 1i64..5) {
            let cfg = FeatureConfig::default_dictionary();
            let range = (Timestamp(0), Timestamp(600));
            let (s, e) = (Timestamp(lo * 60), Timestamp((lo + len) * 60));
            let selected = featurize(&flows, &cfg, Some(range)).unwrap().select_time_range(s, e).unwrap();
            let filtered: Vec<FlowRecord> = flows.iter().filter(|f| f.start_time >= s && f.start_time < e).cloned().collect();
            prop_assert_eq!(selected, featurize(&filtered, &cfg, Some((s, e))).unwrap());
        }
    }
}
