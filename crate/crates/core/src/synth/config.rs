use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faac::SERVICE_PORTS;
use crate::flow::AttackType;
use crate::time::Timestamp;

pub const DAY: i64 = 86_400;
pub const DEFAULT_ECHO_RATE: f64 = 3.5;

pub const PRESETS: &[&str] = &["default", "botnet", "dos-echo", "hidden-scan"];

/// An injected attack episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub attack_type: AttackType,
    pub start: Timestamp,
    /// Seconds.
    pub duration: i64,
    /// Flow (or conversation) rate as a multiple of the background base rate.
    pub intensity: f64,
    /// When false the flows are emitted with a BACKGROUND label.
    #[serde(default = "yes")]
    pub labelled: bool,
    /// Destination ports for scans; a full sweep when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ports: Option<Vec<u16>>,
}

fn yes() -> bool {
    true
}

/// Unlabelled conversations on one service port inside calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contamination {
    pub port: u16,
    pub start: Timestamp,
    pub duration: i64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub start: Timestamp,
    pub calibration_days: u32,
    pub test_days: u32,
    /// Mean background requests per minute.
    pub base_rate: f64,
    pub diurnal_amplitude: f64,
    /// Minute of the day with the highest rate.
    #[serde(default = "default_peak")]
    pub diurnal_peak_minute: u32,
    /// Service port (decimal string) or `other` → fraction of requests.
    pub protocol_mix: BTreeMap<String, f64>,
    #[serde(default)]
    pub episodes: Vec<Episode>,
    #[serde(default)]
    pub contamination: Option<Contamination>,
    #[serde(default)]
    pub telnet_echo: bool,
    /// TELNET conversations per minute during DOS episodes.
    #[serde(default = "default_echo")]
    pub echo_rate: f64,
}

fn default_peak() -> u32 {
    14 * 60
}

fn default_echo() -> f64 {
    DEFAULT_ECHO_RATE
}

/// Parsed protocol-mix entry: `None` stands for a random non-service port.
pub(crate) type MixEntry = (Option<u16>, f64);

impl ScenarioConfig {
    pub fn calibration_range(&self) -> (Timestamp, Timestamp) {
        let end = self.start.plus(self.calibration_days as i64 * DAY);
        (self.start, end)
    }

    pub fn test_range(&self) -> (Timestamp, Timestamp) {
        let (_, s) = self.calibration_range();
        (s, s.plus(self.test_days as i64 * DAY))
    }

    pub fn full_range(&self) -> (Timestamp, Timestamp) {
        (self.start, self.test_range().1)
    }

    /// Expected background requests per minute at `t`.
    pub fn expected_rate(&self, t: Timestamp) -> f64 {
        let minute = (t.seconds().rem_euclid(DAY) / 60) as f64;
        let phase =
            2.0 * std::f64::consts::PI * (minute - self.diurnal_peak_minute as f64) / 1440.0;
        self.base_rate * (1.0 + self.diurnal_amplitude * phase.cos())
    }

    pub(crate) fn parsed_mix(&self) -> Result<Vec<MixEntry>> {
        self.protocol_mix
            .iter()
            .map(|(k, v)| {
                let port = if k == "other" {
                    None
                } else {
                    Some(k.parse::<u16>().map_err(|_| {
                        Error::Config(format!(
                            "protocol_mix key {k:?} is neither a port nor \"other\""
                        ))
                    })?)
                };
                Ok((port, *v))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.calibration_days == 0 || self.test_days == 0 {
            return bad("calibration_days and test_days must be positive".into());
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return bad(format!(
                "base_rate must be positive, got {}",
                self.base_rate
            ));
        }
        if !(0.0..1.0).contains(&self.diurnal_amplitude) {
            return bad(format!(
                "diurnal_amplitude must lie in [0, 1), got {}",
                self.diurnal_amplitude
            ));
        }
        if self.diurnal_peak_minute >= 1440 {
            return bad("diurnal_peak_minute must be below 1440".into());
        }
        if !self.start.is_aligned(60) {
            return bad("scenario start must be minute-aligned".into());
        }
        let mix = self.parsed_mix()?;
        if mix.iter().any(|(_, f)| !(*f >= 0.0)) {
            return bad("protocol_mix fractions must be non-negative".into());
        }
        let total: f64 = mix.iter().map(|(_, f)| f).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("protocol_mix fractions sum to {total}, expected 1"));
        }
        if !(self.echo_rate >= 0.0) {
            return bad("echo_rate must be non-negative".into());
        }
        let (ts, te) = self.test_range();
        for (i, e) in self.episodes.iter().enumerate() {
            if e.attack_type == AttackType::Other {
                return bad(format!(
                    "episode {i}: attack type `other` cannot be generated"
                ));
            }
            if e.duration <= 0 || !(e.intensity > 0.0 && e.intensity.is_finite()) {
                return bad(format!(
                    "episode {i}: duration and intensity must be positive"
                ));
            }
            if e.start < ts || e.start.plus(e.duration) > te {
                return bad(format!(
                    "episode {i} lies outside the test range [{ts}, {te})"
                ));
            }
            if let Some(p) = &e.ports {
                if p.is_empty() || p.contains(&0) {
                    return bad(format!(
                        "episode {i}: port list must be non-empty and exclude 0"
                    ));
                }
            }
        }
        if let Some(c) = &self.contamination {
            let (cs, ce) = self.calibration_range();
            if c.duration <= 0 || !(c.intensity > 0.0) || c.port == 0 {
                return bad("contamination needs a port, positive duration and intensity".into());
            }
            if c.start < cs || c.start.plus(c.duration) > ce {
                return bad(format!(
                    "contamination lies outside the calibration range [{cs}, {ce})"
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

pub fn default_mix() -> BTreeMap<String, f64> {
    let fractions: &[(u16, f64)] = &[
        (80, 0.30),
        (443, 0.25),
        (53, 0.15),
        (25, 0.04),
        (22, 0.03),
        (23, 0.02),
        (6667, 0.003),
        (70, 0.001),
        (79, 0.001),
        (6543, 0.005),
    ];
    debug_assert!(fractions
        .iter()
        .all(|(p, _)| SERVICE_PORTS.iter().any(|(_, q)| q == p)));
    let mut m: BTreeMap<String, f64> = fractions.iter().map(|(p, f)| (p.to_string(), *f)).collect();
    let used: f64 = m.values().sum();
    m.insert("other".into(), 1.0 - used);
    m
}

fn base(seed: u64, calibration_days: u32, test_days: u32) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        start: Timestamp::from_ymd_hms(2024, 3, 4, 0, 0, 0),
        calibration_days,
        test_days,
        base_rate: 60.0,
        diurnal_amplitude: 0.5,
        diurnal_peak_minute: default_peak(),
        protocol_mix: default_mix(),
        episodes: Vec::new(),
        contamination: None,
        telnet_echo: false,
        echo_rate: DEFAULT_ECHO_RATE,
    }
}

fn at(c: &ScenarioConfig, day: i64, hour: i64, minute: i64) -> Timestamp {
    c.start.plus(day * DAY + hour * 3600 + minute * 60)
}

fn episode(
    c: &ScenarioConfig,
    t: AttackType,
    day: i64,
    hour: i64,
    minutes: i64,
    intensity: f64,
) -> Episode {
    Episode {
        attack_type: t,
        start: at(c, day, hour, 0),
        duration: minutes * 60,
        intensity,
        labelled: true,
        ports: None,
    }
}

/// Built-in scenarios by name; see [`PRESETS`].
pub fn preset(name: &str, seed: u64) -> Result<ScenarioConfig> {
    use AttackType::*;
    let c = match name {
        // Seven clean calibration days, three test days with every attack.
        "default" => {
            let mut c = base(seed, 7, 3);
            c.episodes = vec![
                episode(&c, Dos, 7, 10, 60, 2.0),
                episode(&c, Scan11, 7, 15, 30, 1.0),
                episode(&c, Scan44, 8, 3, 30, 1.0),
                episode(&c, Nerisbotnet, 8, 12, 90, 0.1),
                episode(&c, Nerisbotnet, 9, 8, 60, 0.1),
                episode(&c, Dos, 9, 20, 30, 2.0),
            ];
            c
        }
        // IRC conversations leak into the last calibration day unlabelled.
        "botnet" => {
            let mut c = base(seed, 3, 1);
            c.contamination = Some(Contamination {
                port: 6667,
                start: at(&c, 2, 0, 0),
                duration: DAY,
                intensity: 0.1,
            });
            c.episodes = [2, 8, 14, 20]
                .iter()
                .map(|&h| episode(&c, Nerisbotnet, 3, h, 45, 0.1))
                .collect();
            c
        }
        // Weak HTTP floods, each echoed by TELNET conversations.
        "dos-echo" => {
            let mut c = base(seed, 2, 1);
            c.telnet_echo = true;
            c.episodes = [3, 9, 15, 21]
                .iter()
                .map(|&h| episode(&c, Dos, 2, h, 30, 0.15))
                .collect();
            c
        }
        // A 13-minute unlabelled gopher/finger scan among ten test days.
        "hidden-scan" => {
            let mut c = base(seed, 2, 10);
            let mut scan = episode(&c, Scan11, 6, 13, 13, 10.0 / 60.0);
            scan.start = at(&c, 6, 13, 20);
            scan.labelled = false;
            scan.ports = Some(vec![70, 79]);
            c.episodes = vec![episode(&c, Dos, 4, 11, 30, 2.0), scan];
            c
        }
        other => {
            return Err(Error::Config(format!(
                "unknown scenario preset {other:?}; known: {}",
                PRESETS.join(", ")
            )))
        }
    };
    c.validate()?;
    Ok(c)
}
