//! The windows × features counter matrix and the dataset-variant operations
//! applied to it.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::AttackType;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Normal,
    Anomalous,
}

/// Label of one observation window: anomalous exactly when at least one
/// attack type was observed in it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowLabel {
    attack_types: BTreeSet<AttackType>,
}

impl WindowLabel {
    pub fn normal() -> Self {
        WindowLabel::default()
    }

    pub fn with_attacks(attack_types: BTreeSet<AttackType>) -> Self {
        WindowLabel { attack_types }
    }

    pub fn kind(&self) -> WindowKind {
        if self.attack_types.is_empty() {
            WindowKind::Normal
        } else {
            WindowKind::Anomalous
        }
    }

    pub fn is_normal(&self) -> bool {
        self.attack_types.is_empty()
    }

    pub fn attack_types(&self) -> &BTreeSet<AttackType> {
        &self.attack_types
    }

    pub fn contains(&self, t: AttackType) -> bool {
        self.attack_types.contains(&t)
    }

    pub(crate) fn insert(&mut self, t: AttackType) {
        self.attack_types.insert(t);
    }

    pub fn label_token(&self) -> &'static str {
        match self.kind() {
            WindowKind::Normal => "normal",
            WindowKind::Anomalous => "anomalous",
        }
    }

    pub fn attack_token(&self) -> String {
        self.attack_types
            .iter()
            .map(|t| t.as_str())
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse_tokens(label: &str, attacks: &str) -> std::result::Result<Self, String> {
        let mut set = BTreeSet::new();
        for tok in attacks.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            set.insert(tok.parse::<AttackType>().map_err(|e| e.to_string())?);
        }
        let wl = WindowLabel::with_attacks(set);
        if wl.label_token() != label {
            return Err(format!(
                "label {label:?} inconsistent with attack types {attacks:?}"
            ));
        }
        Ok(wl)
    }
}

/// Counter matrix with one row per window and one column per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    window_length: i64,
    window_starts: Vec<Timestamp>,
    feature_names: Vec<String>,
    counts: Vec<f64>,
    window_labels: Vec<WindowLabel>,
}

impl ObservationMatrix {
    pub fn new(
        window_length: i64,
        window_starts: Vec<Timestamp>,
        feature_names: Vec<String>,
        counts: Vec<f64>,
        window_labels: Vec<WindowLabel>,
    ) -> Result<Self> {
        if window_length <= 0 {
            return Err(Error::InvalidInput("window length must be positive".into()));
        }
        let n = window_starts.len();
        if counts.len() != n * feature_names.len() || window_labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "matrix dimensions disagree: {n} windows, {} features, {} cells, {} labels",
                feature_names.len(),
                counts.len(),
                window_labels.len()
            )));
        }
        for (i, t) in window_starts.iter().enumerate() {
            if !t.is_aligned(window_length) {
                return Err(Error::InvalidInput(format!(
                    "window start {t} is not aligned to {window_length} s"
                )));
            }
            if i > 0 && window_starts[i - 1] >= *t {
                return Err(Error::InvalidInput(format!(
                    "window starts not strictly increasing at {t}"
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate feature name {name:?}"
                )));
            }
        }
        Ok(ObservationMatrix {
            window_length,
            window_starts,
            feature_names,
            counts,
            window_labels,
        })
    }

    pub fn window_length(&self) -> i64 {
        self.window_length
    }

    pub fn n_windows(&self) -> usize {
        self.window_starts.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn window_starts(&self) -> &[Timestamp] {
        &self.window_starts
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn window_labels(&self) -> &[WindowLabel] {
        &self.window_labels
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.counts[i * p..(i + 1) * p]
    }

    pub fn get(&self, window: usize, feature: usize) -> f64 {
        self.counts[window * self.n_features() + feature]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn window_index(&self, t: Timestamp) -> Option<usize> {
        self.window_starts.binary_search(&t).ok()
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.n_windows())
            .map(|i| self.get(i, feature))
            .collect()
    }

    /// Rows as owned vectors.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_windows())
            .map(|i| self.row(i).to_vec())
            .collect()
    }

    /// New matrix with the given rows, in the given (increasing) order.
    pub fn select_rows(&self, rows: &[usize]) -> ObservationMatrix {
        let p = self.n_features();
        let mut counts = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            counts.extend_from_slice(self.row(r));
        }
        ObservationMatrix {
            window_length: self.window_length,
            window_starts: rows.iter().map(|&r| self.window_starts[r]).collect(),
            feature_names: self.feature_names.clone(),
            counts,
            window_labels: rows
                .iter()
                .map(|&r| self.window_labels[r].clone())
                .collect(),
        }
    }

    /// Indices of NORMAL windows.
    pub fn normal_rows(&self) -> Vec<usize> {
        (0..self.n_windows())
            .filter(|&i| self.window_labels[i].is_normal())
            .collect()
    }

    /// Rows whose window starts in `[start, end)`.
    pub fn select_time_range(&self, start: Timestamp, end: Timestamp) -> Result<ObservationMatrix> {
        if start >= end {
            return Err(Error::Config(format!(
                "time range start {start} must precede end {end}"
            )));
        }
        let rows: Vec<usize> = (0..self.n_windows())
            .filter(|&i| self.window_starts[i] >= start && self.window_starts[i] < end)
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptySelection(format!(
                "no windows in [{start}, {end})"
            )));
        }
        Ok(self.select_rows(&rows))
    }

    pub fn drop_features(&self, names: &[&str]) -> Result<ObservationMatrix> {
        let missing: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| self.feature_index(n).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(Error::FeatureMismatch(format!(
                "unknown features: {}",
                missing.join(", ")
            )));
        }
        let keep: Vec<usize> = (0..self.n_features())
            .filter(|&j| !names.contains(&self.feature_names[j].as_str()))
            .collect();
        Ok(self.select_columns(&keep))
    }

    pub fn select_columns(&self, cols: &[usize]) -> ObservationMatrix {
        let mut counts = Vec::with_capacity(self.n_windows() * cols.len());
        for i in 0..self.n_windows() {
            let row = self.row(i);
            counts.extend(cols.iter().map(|&j| row[j]));
        }
        ObservationMatrix {
            window_length: self.window_length,
            window_starts: self.window_starts.clone(),
            feature_names: cols
                .iter()
                .map(|&j| self.feature_names[j].clone())
                .collect(),
            counts,
            window_labels: self.window_labels.clone(),
        }
    }

    /// Side-by-side union: columns of `a` then `b`, renamed with the given
    /// prefixes. Both matrices must share windows and labels.
    pub fn union_features(
        a: &ObservationMatrix,
        b: &ObservationMatrix,
        prefixes: (&str, &str),
    ) -> Result<ObservationMatrix> {
        if a.window_length != b.window_length {
            return Err(Error::FeatureMismatch(format!(
                "window lengths differ: {} vs {}",
                a.window_length, b.window_length
            )));
        }
        for i in 0..a.n_windows().max(b.n_windows()) {
            match (a.window_starts.get(i), b.window_starts.get(i)) {
                (Some(x), Some(y)) if x == y => {
                    if a.window_labels[i] != b.window_labels[i] {
                        return Err(Error::FeatureMismatch(format!(
                            "window labels differ at {x}"
                        )));
                    }
                }
                (Some(x), Some(y)) => {
                    return Err(Error::FeatureMismatch(format!(
                        "windows misaligned at {}",
                        x.min(y)
                    )))
                }
                (Some(x), None) | (None, Some(x)) => {
                    return Err(Error::FeatureMismatch(format!("windows misaligned at {x}")))
                }
                (None, None) => unreachable!(),
            }
        }
        let names: Vec<String> = a
            .feature_names
            .iter()
            .map(|n| format!("{}{n}", prefixes.0))
            .chain(b.feature_names.iter().map(|n| format!("{}{n}", prefixes.1)))
            .collect();
        let mut counts = Vec::with_capacity(a.n_windows() * names.len());
        for i in 0..a.n_windows() {
            counts.extend_from_slice(a.row(i));
            counts.extend_from_slice(b.row(i));
        }
        ObservationMatrix::new(
            a.window_length,
            a.window_starts.clone(),
            names,
            counts,
            a.window_labels.clone(),
        )
        .map_err(|e| Error::FeatureMismatch(format!("union: {e}")))
    }

    /// Removes the listed windows. Timestamps that are not window starts are
    /// returned rather than treated as errors.
    pub fn exclude_observations(
        &self,
        timestamps: &[Timestamp],
    ) -> (ObservationMatrix, Vec<Timestamp>) {
        let drop: BTreeSet<Timestamp> = timestamps.iter().copied().collect();
        let missing = drop
            .iter()
            .copied()
            .filter(|t| self.window_index(*t).is_none())
            .collect();
        let rows: Vec<usize> = (0..self.n_windows())
            .filter(|&i| !drop.contains(&self.window_starts[i]))
            .collect();
        (self.select_rows(&rows), missing)
    }

    /// Row-wise concatenation; `other` must follow `self` in time and share
    /// its feature set.
    pub fn append_rows(&self, other: &ObservationMatrix) -> Result<ObservationMatrix> {
        if self.feature_names != other.feature_names {
            return Err(Error::FeatureMismatch("feature sets differ".into()));
        }
        let mut starts = self.window_starts.clone();
        starts.extend_from_slice(&other.window_starts);
        let mut counts = self.counts.clone();
        counts.extend_from_slice(&other.counts);
        let mut labels = self.window_labels.clone();
        labels.extend_from_slice(&other.window_labels);
        ObservationMatrix::new(
            self.window_length,
            starts,
            self.feature_names.clone(),
            counts,
            labels,
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "window_start")?;
        for n in &self.feature_names {
            write!(w, ",{n}")?;
        }
        writeln!(w, ",label,attack_types")?;
        for i in 0..self.n_windows() {
            write!(w, "{}", self.window_starts[i])?;
            for v in self.row(i) {
                write!(w, ",{v}")?;
            }
            let l = &self.window_labels[i];
            writeln!(w, ",{},{}", l.label_token(), l.attack_token())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv<R: BufRead>(
        reader: R,
        window_length: i64,
    ) -> std::result::Result<Self, String> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or("missing header")?
            .map_err(|e| e.to_string())?;
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if cols.len() < 3
            || cols[0] != "window_start"
            || cols[cols.len() - 2] != "label"
            || cols[cols.len() - 1] != "attack_types"
        {
            return Err("header must be window_start,<features...>,label,attack_types".into());
        }
        let names: Vec<String> = cols[1..cols.len() - 2]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let p = names.len();
        let mut starts = Vec::new();
        let mut counts = Vec::new();
        let mut labels = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != p + 3 {
                return Err(format!("line {}: expected {} fields", idx + 2, p + 3));
            }
            starts.push(
                fields[0]
                    .parse::<Timestamp>()
                    .map_err(|e| format!("line {}: {e}", idx + 2))?,
            );
            for f in &fields[1..=p] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| format!("line {}: bad count {f:?}", idx + 2))?;
                counts.push(v);
            }
            labels.push(
                WindowLabel::parse_tokens(fields[p + 1], fields[p + 2])
                    .map_err(|e| format!("line {}: {e}", idx + 2))?,
            );
        }
        ObservationMatrix::new(window_length, starts, names, counts, labels)
            .map_err(|e| e.to_string())
    }

    pub fn load(path: &Path, window_length: i64) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(BufReader::new(file), window_length).map_err(|m| Error::format(path, m))
    }

    /// Lookup table from feature name to column.
    pub fn feature_lookup(&self) -> HashMap<&str, usize> {
        self.feature_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ObservationMatrix {
        let mut dos = BTreeSet::new();
        dos.insert(AttackType::Dos);
        ObservationMatrix::new(
            60,
            vec![Timestamp(0), Timestamp(60), Timestamp(120), Timestamp(180)],
            vec!["a".into(), "b".into(), "c".into()],
            vec![1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.],
            vec![
                WindowLabel::normal(),
                WindowLabel::with_attacks(dos),
                WindowLabel::normal(),
                WindowLabel::normal(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn time_range_selection() {
        let m = small();
        assert_eq!(
            m.select_time_range(Timestamp(0), Timestamp(240)).unwrap(),
            m
        );
        let half = m.select_time_range(Timestamp(0), Timestamp(120)).unwrap();
        assert_eq!(half.window_starts(), &[Timestamp(0), Timestamp(60)]);
        assert_eq!(half.row(1), &[4., 5., 6.]);
        assert!(matches!(
            m.select_time_range(Timestamp(600), Timestamp(900)),
            Err(Error::EmptySelection(_))
        ));
        assert!(m.select_time_range(Timestamp(60), Timestamp(60)).is_err());
    }

    #[test]
    fn drop_features_cases() {
        let m = small();
        assert_eq!(m.drop_features(&[]).unwrap(), m);
        let d = m.drop_features(&["b"]).unwrap();
        assert_eq!(d.feature_names(), &["a".to_string(), "c".to_string()]);
        assert_eq!(d.row(2), &[7., 9.]);
        let err = m.drop_features(&["zz", "b"]).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn union_with_self_doubles_width() {
        let m = small();
        let u = ObservationMatrix::union_features(&m, &m, ("uni_", "bid_")).unwrap();
        assert_eq!(u.n_features(), 6);
        assert_eq!(u.n_windows(), 4);
        assert_eq!(u.feature_names()[3], "bid_a");
        assert_eq!(u.row(1), &[4., 5., 6., 4., 5., 6.]);
    }

    #[test]
    fn union_misaligned_names_timestamp() {
        let m = small();
        let shorter = m.select_time_range(Timestamp(60), Timestamp(240)).unwrap();
        let err = ObservationMatrix::union_features(&m, &shorter, ("x_", "y_")).unwrap_err();
        assert!(err.to_string().contains(&Timestamp(0).to_string()), "{err}");
    }

    #[test]
    fn exclude_observations_cases() {
        let m = small();
        let (same, missing) = m.exclude_observations(&[]);
        assert_eq!(same, m);
        assert!(missing.is_empty());
        let (clean, missing) = m.exclude_observations(&[Timestamp(60), Timestamp(999)]);
        assert!(clean.window_labels().iter().all(|l| l.is_normal()));
        assert_eq!(clean.n_windows(), 3);
        assert_eq!(missing, vec![Timestamp(999)]);
    }

    #[test]
    fn csv_round_trip() {
        let m = small();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("window_start,a,b,c,label,attack_types\n"));
        assert!(text.contains(",anomalous,dos\n"));
        let back = ObservationMatrix::read_csv(text.as_bytes(), 60).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn constructor_checks_invariants() {
        let bad = ObservationMatrix::new(
            60,
            vec![Timestamp(60), Timestamp(0)],
            vec!["a".into()],
            vec![1., 2.],
            vec![WindowLabel::normal(), WindowLabel::normal()],
        );
        assert!(bad.is_err());
        let unaligned = ObservationMatrix::new(
            60,
            vec![Timestamp(30)],
            vec!["a".into()],
            vec![1.],
            vec![WindowLabel::normal()],
        );
        assert!(unaligned.is_err());
    }
}
