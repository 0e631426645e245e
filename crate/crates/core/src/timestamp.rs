//! Second-precision UTC timestamps.

use crate::error::{Error, Result};
use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// A UTC instant with second precision. Totally ordered; serialized as RFC 3339.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_unix(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub fn unix(&self) -> i64 {
        self.0
    }

    /// Parse an RFC 3339 instant, truncating any sub-second part.
    pub fn parse(text: &str) -> Result<Self> {
        let dt = DateTime::parse_from_rfc3339(text)
            .map_err(|e| Error::BadTimestamp(format!("{text:?}: {e}")))?;
        Ok(Timestamp(dt.timestamp()))
    }

    pub fn to_rfc3339(&self) -> String {
        match Utc.timestamp_opt(self.0, 0) {
            chrono::LocalResult::Single(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            _ => format!("@{}", self.0),
        }
    }

    /// Absolute distance in seconds.
    pub fn distance(&self, other: Timestamp) -> i64 {
        (self.0 - other.0).abs()
    }

    pub fn offset(&self, secs: i64) -> Timestamp {
        Timestamp(self.0 + secs)
    }
}

impl std::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

impl TryFrom<String> for Timestamp {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Timestamp::parse(&s)
    }
}

impl From<Timestamp> for String {
    fn from(t: Timestamp) -> String {
        t.to_rfc3339()
    }
}

pub const SECONDS_PER_DAY: i64 = 86_400;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_formats_rfc3339() {
        let t = Timestamp::parse("2018-01-29T12:00:00Z").unwrap();
        assert_eq!(t.to_rfc3339(), "2018-01-29T12:00:00Z");
    }

    #[test]
    fn subseconds_truncate() {
        let a = Timestamp::parse("2018-01-29T12:00:00.75Z").unwrap();
        let b = Timestamp::parse("2018-01-29T12:00:00Z").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn offsets_accept_numeric_zones() {
        let t = Timestamp::parse("2018-01-29T12:00:00+02:00").unwrap();
        assert_eq!(t.to_rfc3339(), "2018-01-29T10:00:00Z");
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(Timestamp::parse("yesterday").is_err());
    }
}
