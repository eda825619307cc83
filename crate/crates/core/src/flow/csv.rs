//! The canonical flow CSV format.
//!
//! ```text
//! start_time,duration,src_addr,dst_addr,src_port,dst_port,protocol,fwd_packets,fwd_bytes,rev_packets,rev_bytes,label,attack_type
//! 20160727133800,0.5,10.0.0.1,10.0.0.2,51000,80,tcp,3,180,0,0,background,
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{AttackType, FlowLabel, FlowRecord, Protocol};
use crate::error::{Error, Result};

pub const FLOW_CSV_HEADER: &str = "start_time,duration,src_addr,dst_addr,src_port,dst_port,protocol,fwd_packets,fwd_bytes,rev_packets,rev_bytes,label,attack_type";

const N_FIELDS: usize = 13;

/// Result of parsing a flow file.
#[derive(Debug, Clone, Default)]
pub struct ParsedFlows {
    pub records: Vec<FlowRecord>,
    /// Malformed lines skipped in lenient mode.
    pub skipped: usize,
    /// The first few skip reasons, for reporting.
    pub skip_reasons: Vec<String>,
}

/// Parses flow CSV text. In strict mode the first malformed line aborts with
/// its line number; in lenient mode malformed lines are skipped and counted.
pub fn parse_flow_csv<R: BufRead>(reader: R, strict: bool) -> Result<ParsedFlows> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    if header.trim_end_matches('\r') != FLOW_CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header, expected `{FLOW_CSV_HEADER}`"),
        });
    }

    let mut out = ParsedFlows::default();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(rec) => out.records.push(rec),
            Err(message) if strict => {
                return Err(Error::Parse {
                    line: lineno,
                    message,
                })
            }
            Err(message) => {
                out.skipped += 1;
                if out.skip_reasons.len() < 10 {
                    out.skip_reasons.push(format!("line {lineno}: {message}"));
                }
            }
        }
    }
    Ok(out)
}

fn parse_line(line: &str) -> std::result::Result<FlowRecord, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != N_FIELDS {
        return Err(format!(
            "expected {N_FIELDS} fields, found {}",
            fields.len()
        ));
    }
    let start_time = fields[0].parse().map_err(|e: Error| e.to_string())?;
    let duration: f64 = fields[1]
        .parse()
        .map_err(|_| format!("duration {:?} is not a number", fields[1]))?;
    let port = |s: &str, name: &str| -> std::result::Result<u16, String> {
        let v: u64 = s
            .parse()
            .map_err(|_| format!("{name} {s:?} is not an integer"))?;
        u16::try_from(v).map_err(|_| format!("{name} {v} exceeds 65535"))
    };
    let counter = |s: &str, name: &str| -> std::result::Result<u64, String> {
        s.parse()
            .map_err(|_| format!("{name} {s:?} is not a non-negative integer"))
    };
    let protocol: Protocol = fields[6].parse().map_err(|e: Error| e.to_string())?;
    let label = match (fields[11], fields[12]) {
        ("background", "") => FlowLabel::Background,
        ("background", t) => return Err(format!("background flow carries attack type {t:?}")),
        ("anomaly", "") => return Err("anomaly flow without attack type".into()),
        ("anomaly", t) => FlowLabel::Anomaly(t.parse::<AttackType>().map_err(|e| e.to_string())?),
        (l, _) => return Err(format!("unknown label {l:?}")),
    };
    let rec = FlowRecord {
        start_time,
        duration,
        src_addr: fields[2].to_string(),
        dst_addr: fields[3].to_string(),
        src_port: port(fields[4], "src_port")?,
        dst_port: port(fields[5], "dst_port")?,
        protocol,
        fwd_packets: counter(fields[7], "fwd_packets")?,
        fwd_bytes: counter(fields[8], "fwd_bytes")?,
        rev_packets: counter(fields[9], "rev_packets")?,
        rev_bytes: counter(fields[10], "rev_bytes")?,
        label,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn read_flow_file(path: &Path, strict: bool) -> Result<ParsedFlows> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_flow_csv(BufReader::new(file), strict)
}

pub fn write_flow_csv<W: Write>(mut w: W, flows: &[FlowRecord]) -> std::io::Result<()> {
    writeln!(w, "{FLOW_CSV_HEADER}")?;
    for f in flows {
        let (label, attack) = match f.label {
            FlowLabel::Background => ("background", ""),
            FlowLabel::Anomaly(t) => ("anomaly", t.as_str()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.start_time,
            f.duration,
            f.src_addr,
            f.dst_addr,
            f.src_port,
            f.dst_port,
            f.protocol,
            f.fwd_packets,
            f.fwd_bytes,
            f.rev_packets,
            f.rev_bytes,
            label,
            attack
        )?;
    }
    Ok(())
}

pub fn write_flow_file(path: &Path, flows: &[FlowRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_flow_csv(&mut w, flows).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Timestamp;

    fn body(lines: &[&str]) -> String {
        let mut s = String::from(FLOW_CSV_HEADER);
        for l in lines {
            s.push('\n');
            s.push_str(l);
        }
        s.push('\n');
        s
    }

    #[test]
    fn parses_one_tcp_line() {
        let text =
            body(&["20160727133800,0.5,10.0.0.1,10.0.0.2,51000,80,tcp,3,180,0,0,background,"]);
        let parsed = parse_flow_csv(text.as_bytes(), true).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let r = &parsed.records[0];
        assert_eq!(r.protocol, Protocol::Tcp);
        assert_eq!(r.dst_port, 80);
        assert_eq!(
            r.start_time,
            Timestamp::from_ymd_hms(2016, 7, 27, 13, 38, 0)
        );
        assert_eq!(r.label, FlowLabel::Background);
    }

    #[test]
    fn header_only_is_empty() {
        let parsed = parse_flow_csv(body(&[]).as_bytes(), true).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn lenient_skips_out_of_range_port() {
        let text = body(&[
            "20160727133800,0,a,b,1000,70000,tcp,1,40,0,0,background,",
            "20160727133800,0,a,b,1000,80,tcp,1,40,0,0,anomaly,dos",
        ]);
        let parsed = parse_flow_csv(text.as_bytes(), false).unwrap();
        assert_eq!(parsed.skipped, 1);
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].label, FlowLabel::Anomaly(AttackType::Dos));
    }

    #[test]
    fn strict_reports_line_number() {
        let text = body(&[
            "20160727133800,0,a,b,1000,80,tcp,1,40,0,0,background,",
            "20160727133800,0,a,b,1000,80,tcp,x,40,0,0,background,",
        ]);
        match parse_flow_csv(text.as_bytes(), true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_tokens() {
        for bad in [
            "2016072713380,0,a,b,1000,80,tcp,1,40,0,0,background,",
            "20160727133800,0,a,b,1000,80,tcp,1,40,0,0,benign,",
            "20160727133800,0,a,b,1000,80,tcp,1,40,0,0,anomaly,ddos",
            "20160727133800,0,a,b,1000,80,tcp,1,40,0,0,anomaly,",
            "20160727133800,-1,a,b,1000,80,tcp,1,40,0,0,background,",
            "20160727133800,0,a,b,0,80,tcp,1,40,0,0,background,",
            "20160727133800,0,a,b,1000,80,tcp,1,40,0,background,",
        ] {
            assert!(
                parse_flow_csv(body(&[bad]).as_bytes(), true).is_err(),
                "{bad}"
            );
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = "time,src\n";
        assert!(parse_flow_csv(text.as_bytes(), false).is_err());
    }
}
