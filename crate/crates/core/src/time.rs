//! Simulation time.
//!
//! All time is carried as integer nanoseconds since the Unix epoch. Durations
//! are plain `i64` nanosecond counts.

use std::fmt;
use std::ops::Sub;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::TimeError;

pub const NANOS_PER_MICRO: i64 = 1_000;
pub const NANOS_PER_MILLI: i64 = 1_000_000;
pub const NANOS_PER_SECOND: i64 = 1_000_000_000;
pub const NANOS_PER_MINUTE: i64 = 60 * NANOS_PER_SECOND;
pub const NANOS_PER_HOUR: i64 = 60 * NANOS_PER_MINUTE;
pub const NANOS_PER_DAY: i64 = 24 * NANOS_PER_HOUR;

/// A point in simulated time, nanoseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub i64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    #[inline]
    pub const fn from_nanos(nanos: i64) -> Self {
        SimTime(nanos)
    }

    #[inline]
    pub const fn nanos(self) -> i64 {
        self.0
    }

    /// Adds a nanosecond offset, failing instead of wrapping.
    pub fn checked_add(self, nanos: i64) -> Result<SimTime, TimeError> {
        self.0.checked_add(nanos).map(SimTime).ok_or(TimeError::Overflow { base: self.0, offset: nanos })
    }

    /// Midnight UTC of a calendar date given as `YYYY-MM-DD`.
    pub fn midnight_of(date: &str) -> Result<SimTime, TimeError> {
        let d = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
            .map_err(|_| TimeError::Parse(format!("invalid date {date:?}, expected YYYY-MM-DD")))?;
        let secs = d.and_hms_opt(0, 0, 0).expect("midnight is valid").and_utc().timestamp();
        secs.checked_mul(NANOS_PER_SECOND).map(SimTime).ok_or(TimeError::Overflow { base: secs, offset: 0 })
    }

    /// Resolves a time-of-day (`HH:MM:SS[.fffffffff]`) on the day starting at `midnight`,
    /// or a raw integer nanosecond timestamp.
    pub fn parse_on(midnight: SimTime, text: &str) -> Result<SimTime, TimeError> {
        let text = text.trim();
        if let Ok(raw) = text.parse::<i64>() {
            return Ok(SimTime(raw));
        }
        let t = NaiveTime::parse_from_str(text, "%H:%M:%S%.f")
            .or_else(|_| NaiveTime::parse_from_str(text, "%H:%M"))
            .map_err(|_| TimeError::Parse(format!("invalid time of day {text:?}")))?;
        let since_midnight = t.signed_duration_since(NaiveTime::MIN);
        let nanos = since_midnight
            .num_nanoseconds()
            .ok_or_else(|| TimeError::Parse(format!("time of day out of range: {text:?}")))?;
        midnight.checked_add(nanos)
    }

    /// Nanoseconds since the start of this time's UTC day.
    pub fn time_of_day(self) -> i64 {
        self.0.rem_euclid(NANOS_PER_DAY)
    }
}

impl Sub for SimTime {
    type Output = i64;

    fn sub(self, rhs: SimTime) -> i64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tod = self.time_of_day();
        let h = tod / NANOS_PER_HOUR;
        let m = (tod % NANOS_PER_HOUR) / NANOS_PER_MINUTE;
        let s = (tod % NANOS_PER_MINUTE) / NANOS_PER_SECOND;
        let ns = tod % NANOS_PER_SECOND;
        write!(f, "{}ns ({h:02}:{m:02}:{s:02}.{ns:09})", self.0)
    }
}

/// Parses a duration such as `500ns`, `10us`, `250ms`, `30s`, `1m`, `2h`, or a bare
/// integer (nanoseconds). Fractional values like `1.5s` are accepted.
pub fn parse_duration(text: &str) -> Result<i64, TimeError> {
    let text = text.trim();
    if let Ok(raw) = text.parse::<i64>() {
        return Ok(raw);
    }
    let split = text
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| TimeError::Parse(format!("invalid duration {text:?}")))?;
    let (num, unit) = text.split_at(split);
    let scale = match unit.trim() {
        "ns" => 1,
        "us" => NANOS_PER_MICRO,
        "ms" => NANOS_PER_MILLI,
        "s" => NANOS_PER_SECOND,
        "m" | "min" => NANOS_PER_MINUTE,
        "h" => NANOS_PER_HOUR,
        other => return Err(TimeError::Parse(format!("unknown duration unit {other:?} in {text:?}"))),
    };
    let num = num.trim();
    if let Ok(whole) = num.parse::<i64>() {
        return whole.checked_mul(scale).ok_or_else(|| TimeError::Parse(format!("duration overflows: {text:?}")));
    }
    let value: f64 = num.parse().map_err(|_| TimeError::Parse(format!("invalid duration {text:?}")))?;
    let nanos = (value * scale as f64).round();
    if !nanos.is_finite() || nanos.abs() > i64::MAX as f64 {
        return Err(TimeError::Parse(format!("duration overflows: {text:?}")));
    }
    Ok(nanos as i64)
}
