//! Declarative feature dictionaries.
//!
//! A dictionary is a TOML document:
//!
//! ```toml
//! window_length = 60
//!
//! [[feature]]
//! name = "dport_http"
//! field = "dst_port"
//! match = { exact = 80 }
//! weight = "count_flows"
//!
//! [[feature]]
//! name = "dport_other"
//! field = "dst_port"
//! match = "other"
//! ```
//!
//! `match` is one of `{ exact = v }`, `{ set = [v, ...] }`,
//! `{ range = [lo, hi] }` (inclusive) or `"other"`, the catch-all that fires
//! when no other feature on the same field matched. Protocol values are IANA
//! numbers (tcp 6, udp 17, icmp 1, other 255). `weight` defaults to
//! `count_flows`; `sum_field` adds the field's value instead of 1.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureField {
    SrcPort,
    DstPort,
    Protocol,
    FwdPackets,
    FwdBytes,
    FlowCount,
}

impl FeatureField {
    pub fn value(self, f: &FlowRecord) -> u64 {
        match self {
            FeatureField::SrcPort => f.src_port as u64,
            FeatureField::DstPort => f.dst_port as u64,
            FeatureField::Protocol => f.protocol.code(),
            FeatureField::FwdPackets => f.fwd_packets,
            FeatureField::FwdBytes => f.fwd_bytes,
            FeatureField::FlowCount => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Exact(u64),
    Set(BTreeSet<u64>),
    Range([u64; 2]),
    Other,
}

impl Matcher {
    /// Direct match; the catch-all is resolved by the featurizer.
    pub fn matches(&self, v: u64) -> bool {
        match self {
            Matcher::Exact(x) => v == *x,
            Matcher::Set(s) => s.contains(&v),
            Matcher::Range([lo, hi]) => v >= *lo && v <= *hi,
            Matcher::Other => false,
        }
    }

    pub fn is_catch_all(&self) -> bool {
        matches!(self, Matcher::Other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    #[default]
    CountFlows,
    SumField,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub field: FeatureField,
    #[serde(rename = "match")]
    pub matcher: Matcher,
    #[serde(default)]
    pub weight: Weight,
}

impl FeatureSpec {
    pub fn new(name: &str, field: FeatureField, matcher: Matcher, weight: Weight) -> Self {
        FeatureSpec {
            name: name.to_string(),
            field,
            matcher,
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Window length in seconds.
    #[serde(default = "default_window")]
    pub window_length: i64,
    #[serde(rename = "feature")]
    pub specs: Vec<FeatureSpec>,
}

fn default_window() -> i64 {
    60
}

impl FeatureConfig {
    pub fn new(specs: Vec<FeatureSpec>, window_length: i64) -> Result<Self> {
        let cfg = FeatureConfig {
            window_length,
            specs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length <= 0 {
            return Err(Error::Config(format!(
                "window_length must be positive, got {}",
                self.window_length
            )));
        }
        if self.specs.is_empty() {
            return Err(Error::Config("feature config defines no features".into()));
        }
        let mut names = BTreeSet::new();
        let mut catch_all: BTreeMap<FeatureField, &str> = BTreeMap::new();
        for spec in &self.specs {
            if spec.name.is_empty() || spec.name.contains(',') {
                return Err(Error::Config(format!(
                    "invalid feature name {:?}",
                    spec.name
                )));
            }
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate feature name {:?}",
                    spec.name
                )));
            }
            match &spec.matcher {
                Matcher::Range([lo, hi]) if lo > hi => {
                    return Err(Error::Config(format!(
                        "feature {:?}: range [{lo}, {hi}] is empty",
                        spec.name
                    )))
                }
                Matcher::Set(s) if s.is_empty() => {
                    return Err(Error::Config(format!(
                        "feature {:?}: empty value set",
                        spec.name
                    )))
                }
                Matcher::Other => {
                    if let Some(prev) = catch_all.insert(spec.field, &spec.name) {
                        return Err(Error::Config(format!(
                            "features {prev:?} and {:?} are both catch-alls for {:?}",
                            spec.name, spec.field
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: FeatureConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("feature config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("feature config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Copy without the named features.
    pub fn without(&self, names: &[&str]) -> Result<Self> {
        let missing: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| !self.specs.iter().any(|s| s.name == *n))
            .collect();
        if !missing.is_empty() {
            return Err(Error::FeatureMismatch(format!(
                "unknown features: {}",
                missing.join(", ")
            )));
        }
        let specs = self
            .specs
            .iter()
            .filter(|s| !names.contains(&s.name.as_str()))
            .cloned()
            .collect();
        FeatureConfig::new(specs, self.window_length)
    }

    /// The 34-feature desk dictionary.
    pub fn default_dictionary() -> Self {
        use FeatureField::*;
        use Weight::*;

        let mut specs = Vec::with_capacity(34);
        for (field, prefix) in [(DstPort, "dport"), (SrcPort, "sport")] {
            for (svc, port) in SERVICE_PORTS {
                specs.push(FeatureSpec::new(
                    &format!("{prefix}_{svc}"),
                    field,
                    Matcher::Exact(*port as u64),
                    CountFlows,
                ));
            }
            specs.push(FeatureSpec::new(
                &format!("{prefix}_ephemeral"),
                field,
                Matcher::Range([49152, 65535]),
                CountFlows,
            ));
            specs.push(FeatureSpec::new(
                &format!("{prefix}_other"),
                field,
                Matcher::Other,
                CountFlows,
            ));
        }
        for (name, code) in [("proto_tcp", 6), ("proto_udp", 17), ("proto_icmp", 1)] {
            specs.push(FeatureSpec::new(
                name,
                Protocol,
                Matcher::Exact(code),
                CountFlows,
            ));
        }
        specs.push(FeatureSpec::new(
            "proto_other",
            Protocol,
            Matcher::Other,
            CountFlows,
        ));
        specs.push(FeatureSpec::new(
            "flows_total",
            FlowCount,
            Matcher::Other,
            CountFlows,
        ));
        specs.push(FeatureSpec::new(
            "pkts_total",
            FwdPackets,
            Matcher::Range([0, UNBOUNDED]),
            SumField,
        ));
        specs.push(FeatureSpec::new(
            "pkts_single",
            FwdPackets,
            Matcher::Exact(1),
            CountFlows,
        ));
        specs.push(FeatureSpec::new(
            "bytes_total",
            FwdBytes,
            Matcher::Range([0, UNBOUNDED]),
            SumField,
        ));
        specs.push(FeatureSpec::new(
            "bytes_small",
            FwdBytes,
            Matcher::Range([0, 99]),
            CountFlows,
        ));
        specs.push(FeatureSpec::new(
            "bytes_large",
            FwdBytes,
            Matcher::Range([10_000, UNBOUNDED]),
            CountFlows,
        ));
        FeatureConfig::new(specs, 60).expect("default dictionary is valid")
    }
}

/// Open upper bound for ranges; the largest value a TOML integer can hold.
pub const UNBOUNDED: u64 = i64::MAX as u64;

/// Named service ports of the default dictionary. `mds` stands in for the
/// unlisted service of that name in the original dictionary.
pub const SERVICE_PORTS: &[(&str, u16)] = &[
    ("http", 80),
    ("https", 443),
    ("dns", 53),
    ("smtp", 25),
    ("ssh", 22),
    ("telnet", 23),
    ("irc", 6667),
    ("gopher", 70),
    ("finger", 79),
    ("mds", 6543),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dictionary_shape() {
        let cfg = FeatureConfig::default_dictionary();
        assert_eq!(cfg.specs.len(), 34);
        assert_eq!(cfg.window_length, 60);
        let names = cfg.feature_names();
        for n in [
            "dport_http",
            "dport_telnet",
            "sport_telnet",
            "dport_irc",
            "sport_irc",
            "dport_gopher",
            "dport_finger",
            "sport_mds",
        ] {
            assert!(names.iter().any(|x| x == n), "{n} missing");
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = FeatureConfig::default_dictionary();
        let text = cfg.to_toml_string();
        assert_eq!(FeatureConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn parses_documented_schema() {
        let text = r#"
            window_length = 30
            [[feature]]
            name = "dport_http"
            field = "dst_port"
            match = { exact = 80 }
            [[feature]]
            name = "dport_web"
            field = "dst_port"
            match = { set = [80, 443] }
            weight = "count_flows"
            [[feature]]
            name = "dport_other"
            field = "dst_port"
            match = "other"
            [[feature]]
            name = "bytes"
            field = "fwd_bytes"
            match = { range = [0, 1000000] }
            weight = "sum_field"
        "#;
        let cfg = FeatureConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.window_length, 30);
        assert_eq!(cfg.specs[1].matcher, Matcher::Set([80, 443].into()));
        assert_eq!(cfg.specs[3].weight, Weight::SumField);
    }

    #[test]
    fn rejects_invalid_configs() {
        let dup = vec![
            FeatureSpec::new(
                "a",
                FeatureField::DstPort,
                Matcher::Exact(1),
                Weight::CountFlows,
            ),
            FeatureSpec::new(
                "a",
                FeatureField::DstPort,
                Matcher::Exact(2),
                Weight::CountFlows,
            ),
        ];
        assert!(FeatureConfig::new(dup, 60).is_err());
        let two_catch = vec![
            FeatureSpec::new(
                "a",
                FeatureField::DstPort,
                Matcher::Other,
                Weight::CountFlows,
            ),
            FeatureSpec::new(
                "b",
                FeatureField::DstPort,
                Matcher::Other,
                Weight::CountFlows,
            ),
        ];
        assert!(FeatureConfig::new(two_catch, 60).is_err());
        let ok = vec![FeatureSpec::new(
            "a",
            FeatureField::DstPort,
            Matcher::Other,
            Weight::CountFlows,
        )];
        assert!(FeatureConfig::new(ok.clone(), 0).is_err());
        assert!(FeatureConfig::new(ok, 60).is_ok());
    }

    #[test]
    fn without_removes_and_reports_unknown() {
        let cfg = FeatureConfig::default_dictionary();
        assert_eq!(
            cfg.without(&["sport_irc", "dport_irc"])
                .unwrap()
                .specs
                .len(),
            32
        );
        let err = cfg.without(&["dport_nope"]).unwrap_err();
        assert!(err.to_string().contains("dport_nope"));
    }
}
