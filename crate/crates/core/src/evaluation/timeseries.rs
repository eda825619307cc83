use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::faac::ObservationMatrix;
use crate::time::Timestamp;

/// Selected feature columns over time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub feature_names: Vec<String>,
    pub window_starts: Vec<Timestamp>,
    pub values: Vec<Vec<f64>>,
}

/// Writes `window_start,<features...>` for windows in `[start, end)`, or all
/// windows without a range.
pub fn write_timeseries<W: Write>(
    matrix: &ObservationMatrix,
    features: &[&str],
    range: Option<(Timestamp, Timestamp)>,
    mut w: W,
) -> Result<()> {
    let cols: Vec<usize> = features
        .iter()
        .map(|f| {
            matrix
                .feature_index(f)
                .ok_or_else(|| Error::FeatureMismatch(format!("unknown feature {f:?}")))
        })
        .collect::<Result<_>>()?;
    let io = |e: std::io::Error| Error::Io {
        path: "<timeseries>".into(),
        source: e,
    };
    writeln!(w, "window_start,{}", features.join(",")).map_err(io)?;
    for (i, t) in matrix.window_starts().iter().enumerate() {
        if let Some((a, b)) = range {
            if *t < a || *t >= b {
                continue;
            }
        }
        write!(w, "{t}").map_err(io)?;
        for &c in &cols {
            write!(w, ",{}", matrix.get(i, c)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

pub fn export_timeseries(
    matrix: &ObservationMatrix,
    features: &[&str],
    range: Option<(Timestamp, Timestamp)>,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    write_timeseries(matrix, features, range, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_timeseries(path: &Path) -> Result<TimeSeries> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let mut cols = header.split(',');
    if cols.next() != Some("window_start") {
        return Err(Error::format(path, "first column must be window_start"));
    }
    let feature_names: Vec<String> = cols.map(str::to_string).collect();
    let mut ts = TimeSeries {
        feature_names,
        window_starts: Vec::new(),
        values: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split(',');
        let t: Timestamp = fields
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 2)))?;
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 2)))?;
        if row.len() != ts.feature_names.len() {
            return Err(Error::format(
                path,
                format!("line {}: wrong column count", i + 2),
            ));
        }
        ts.window_starts.push(t);
        ts.values.push(row);
    }
    Ok(ts)
}
