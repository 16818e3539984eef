//! Timestamp parsing and formatting.
//!
//! Stored timestamps are RFC 3339 with seconds precision and an explicit
//! offset. Offset-less timestamps appear in some imported logs; they are read
//! as UTC.

use chrono::{DateTime, FixedOffset, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use thiserror::Error;

pub type Timestamp = DateTime<FixedOffset>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid timestamp {0:?}")]
pub struct TimestampError(pub String);

/// Parse either an offset-bearing RFC 3339 timestamp or an offset-less local one.
pub fn parse_ts(s: &str) -> Result<Timestamp, TimestampError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t);
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .map(|naive| Utc.from_utc_datetime(&naive).fixed_offset())
        .map_err(|_| TimestampError(s.to_owned()))
}

/// Parse a timestamp that must carry an explicit offset (writer side).
pub fn parse_ts_strict(s: &str) -> Result<Timestamp, TimestampError> {
    DateTime::parse_from_rfc3339(s).map_err(|_| TimestampError(s.to_owned()))
}

pub fn format_ts(t: &Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Wall time truncated to whole seconds, in UTC. Only the CLI reads it.
pub fn system_now() -> Timestamp {
    let now = Utc::now();
    Utc.timestamp_opt(now.timestamp(), 0)
        .single()
        .unwrap_or(now)
        .fixed_offset()
}

/// Scripted clock: a fixed origin advanced by explicit steps. No wall time.
#[derive(Debug, Clone)]
pub struct ScriptedClock {
    now: Timestamp,
}

impl ScriptedClock {
    pub fn starting_at(origin: &str) -> Result<Self, TimestampError> {
        Ok(ScriptedClock {
            now: parse_ts_strict(origin)?,
        })
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn now_str(&self) -> String {
        format_ts(&self.now)
    }

    pub fn advance(&mut self, seconds: i64) -> Timestamp {
        self.now += chrono::Duration::seconds(seconds);
        self.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsetless_reads_as_utc() {
        let t = parse_ts("2026-02-19T21:55:44").unwrap();
        assert_eq!(format_ts(&t), "2026-02-19T21:55:44Z");
        assert!(parse_ts_strict("2026-02-19T21:55:44").is_err());
    }

    #[test]
    fn keeps_local_offset() {
        let t = parse_ts("2026-02-19T21:55:44-03:00").unwrap();
        assert_eq!(format_ts(&t), "2026-02-19T21:55:44-03:00");
    }

    #[test]
    fn scripted_clock_advances() {
        let mut c = ScriptedClock::starting_at("2026-02-19T09:00:00-03:00").unwrap();
        c.advance(3600);
        assert_eq!(c.now_str(), "2026-02-19T10:00:00-03:00");
    }
}
