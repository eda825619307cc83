//! Second-resolution UTC timestamps in the `YYYYMMDDhhmmss` text form.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

const FORMAT: &str = "%Y%m%d%H%M%S";

/// Seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Timestamp {
        let dt = chrono::NaiveDate::from_ymd_opt(y, mo, d)
            .and_then(|date| date.and_hms_opt(h, mi, s))
            .expect("valid calendar date");
        Timestamp(dt.and_utc().timestamp())
    }

    pub fn seconds(self) -> i64 {
        self.0
    }

    pub fn plus(self, secs: i64) -> Timestamp {
        Timestamp(self.0 + secs)
    }

    /// Start of the window of length `len` seconds that contains this instant.
    pub fn align_down(self, len: i64) -> Timestamp {
        Timestamp(self.0.div_euclid(len) * len)
    }

    pub fn is_aligned(self, len: i64) -> bool {
        self.0.rem_euclid(len) == 0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp(self.0, 0) {
            Some(dt) => write!(f, "{}", dt.format(FORMAT)),
            None => write!(f, "@{}", self.0),
        }
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() != 14 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::InvalidInput(format!(
                "timestamp {s:?} is not in YYYYMMDDhhmmss form"
            )));
        }
        NaiveDateTime::parse_from_str(s, FORMAT)
            .map(|dt| Timestamp(dt.and_utc().timestamp()))
            .map_err(|e| Error::InvalidInput(format!("timestamp {s:?}: {e}")))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
