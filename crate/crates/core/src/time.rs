//! Second-precision UTC timestamps and business-calendar arithmetic.

use chrono::{DateTime, Datelike, Duration, NaiveDate, SecondsFormat, TimeZone, Utc, Weekday};

pub type Timestamp = DateTime<Utc>;

/// Drops sub-second precision.
pub fn truncate(ts: Timestamp) -> Timestamp {
    Utc.timestamp_opt(ts.timestamp(), 0).single().expect("in-range timestamp")
}

pub fn now() -> Timestamp {
    truncate(Utc::now())
}

/// `2024-01-05T09:30:00Z`
pub fn iso8601(ts: Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_iso8601(s: &str) -> Result<Timestamp, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(|t| truncate(t.with_timezone(&Utc)))
}

pub fn at_midnight(date: NaiveDate) -> Timestamp {
    Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
}

pub fn hours(h: f64) -> Duration {
    Duration::seconds((h * 3600.0).round() as i64)
}

pub fn as_hours(d: Duration) -> f64 {
    d.num_seconds() as f64 / 3600.0
}

pub fn is_business_day(date: NaiveDate) -> bool {
    !matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Adds `days` whole business days, keeping the time of day. A start on a
/// weekend counts from the following Monday.
pub fn add_business_days(ts: Timestamp, days: u32) -> Timestamp {
    let mut date = ts.date_naive();
    while !is_business_day(date) {
        date = date.succ_opt().expect("date in range");
    }
    let mut left = days;
    while left > 0 {
        date = date.succ_opt().expect("date in range");
        if is_business_day(date) {
            left -= 1;
        }
    }
    Utc.from_utc_datetime(&date.and_time(ts.time()))
}

/// Advances `ts` by `span` of business time: weekend hours do not count.
pub fn advance_business_time(ts: Timestamp, span: Duration) -> Timestamp {
    let mut cur = ts;
    let mut left = span;
    loop {
        let date = cur.date_naive();
        let next_midnight = at_midnight(date.succ_opt().expect("date in range"));
        if !is_business_day(date) {
            cur = next_midnight;
            continue;
        }
        let room = next_midnight - cur;
        if left < room {
            return cur + left;
        }
        left -= room;
        cur = next_midnight;
    }
}

/// Business days from `start` (inclusive), `count` of them.
pub fn business_days(start: NaiveDate, count: u32) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count as usize);
    let mut date = start;
    while out.len() < count as usize {
        if is_business_day(date) {
            out.push(date);
        }
        date = date.succ_opt().expect("date in range");
    }
    out
}
