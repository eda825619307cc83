use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::flow::{AttackType, FlowRecord};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Episode,
    /// TELNET conversations accompanying a DOS episode.
    Echo,
    Contamination,
}

pub(crate) struct ComponentSpec {
    pub kind: ComponentKind,
    pub episode: Option<usize>,
    pub attack_type: Option<AttackType>,
    pub start: Timestamp,
    pub duration: i64,
    pub labelled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentManifest {
    pub kind: ComponentKind,
    /// Index into the scenario's episode list.
    pub episode: Option<usize>,
    pub attack_type: Option<AttackType>,
    pub start: Timestamp,
    pub duration: i64,
    pub labelled: bool,
    /// Anomalous flows emitted with a BACKGROUND label.
    pub hidden: bool,
    pub n_flows: usize,
    /// Inclusive ranges of flow ids (positions in the flow file).
    pub flow_ids: Vec<[usize; 2]>,
    /// Inclusive ranges of seconds at which the component's flows start.
    pub active_seconds: Vec<[i64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub calibration_range: [Timestamp; 2],
    pub test_range: [Timestamp; 2],
    pub total_flows: usize,
    pub background_flows: usize,
    pub components: Vec<ComponentManifest>,
}

fn ranges<T: Copy + PartialEq + std::ops::Add<Output = T> + From<u8>>(
    sorted: impl Iterator<Item = T>,
) -> Vec<[T; 2]> {
    let mut out: Vec<[T; 2]> = Vec::new();
    for v in sorted {
        match out.last_mut() {
            Some(r) if r[1] == v => {}
            Some(r) if r[1] + T::from(1) == v => r[1] = v,
            _ => out.push([v, v]),
        }
    }
    out
}

pub(crate) fn build_manifest(
    cfg: &ScenarioConfig,
    flows: &[FlowRecord],
    tags: &[u32],
    specs: Vec<ComponentSpec>,
) -> Manifest {
    let mut ids: Vec<Vec<usize>> = vec![Vec::new(); specs.len()];
    for (i, &t) in tags.iter().enumerate() {
        if t > 0 {
            ids[t as usize - 1].push(i);
        }
    }
    let components = specs
        .into_iter()
        .zip(ids)
        .map(|(s, ids)| ComponentManifest {
            hidden: !s.labelled && s.kind != ComponentKind::Echo,
            kind: s.kind,
            episode: s.episode,
            attack_type: s.attack_type,
            start: s.start,
            duration: s.duration,
            labelled: s.labelled,
            n_flows: ids.len(),
            active_seconds: ranges(ids.iter().map(|&i| flows[i].start_time.seconds())),
            flow_ids: ranges(ids.into_iter()),
        })
        .collect();
    let (cs, ce) = cfg.calibration_range();
    let (ts, te) = cfg.test_range();
    Manifest {
        seed: cfg.seed,
        calibration_range: [cs, ce],
        test_range: [ts, te],
        total_flows: flows.len(),
        background_flows: tags.iter().filter(|&&t| t == 0).count(),
        components,
    }
}

impl ComponentManifest {
    pub fn flow_id_iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.flow_ids.iter().flat_map(|r| r[0]..=r[1])
    }

    /// Windows containing at least one of the component's flows.
    pub fn windows(&self, window_length: i64) -> BTreeSet<Timestamp> {
        let mut out = BTreeSet::new();
        for r in &self.active_seconds {
            let mut w = Timestamp(r[0]).align_down(window_length).seconds();
            while w <= r[1] {
                out.insert(Timestamp(w));
                w += window_length;
            }
        }
        out
    }
}

impl Manifest {
    pub fn hidden_flow_ids(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .components
            .iter()
            .filter(|c| c.hidden)
            .flat_map(|c| c.flow_id_iter())
            .collect();
        v.sort_unstable();
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Ground-truth windows per attack episode (config order) and the windows
/// holding hidden anomalous flows.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestWindows {
    pub episodes: Vec<BTreeSet<Timestamp>>,
    pub hidden: BTreeSet<Timestamp>,
}

impl ManifestWindows {
    pub fn all_episodes(&self) -> BTreeSet<Timestamp> {
        self.episodes.iter().flatten().copied().collect()
    }
}

pub fn manifest_windows(manifest: &Manifest, window_length: i64) -> ManifestWindows {
    let episodes = manifest
        .components
        .iter()
        .filter(|c| c.kind == ComponentKind::Episode)
        .map(|c| c.windows(window_length))
        .collect();
    let hidden = manifest
        .components
        .iter()
        .filter(|c| c.hidden)
        .flat_map(|c| c.windows(window_length))
        .collect();
    ManifestWindows { episodes, hidden }
}

/// Windows overlapped by `[start, start + duration)`.
pub fn interval_windows(start: Timestamp, duration: i64, window_length: i64) -> Vec<Timestamp> {
    if duration <= 0 {
        return Vec::new();
    }
    let first = start.align_down(window_length).seconds();
    let last = start.plus(duration - 1).align_down(window_length).seconds();
    (0..=(last - first) / window_length)
        .map(|k| Timestamp(first + k * window_length))
        .collect()
}
