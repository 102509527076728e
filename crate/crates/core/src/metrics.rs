//! Distribution and resolution-time statistics, period comparison and report
//! rendering (human table and CSV).
//!
//! Standard deviation is the population form (divide by n). Two-decimal
//! output rounds half away from zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::Duration;
use serde::Serialize;
use thiserror::Error;

use crate::model::{EngineerId, Ticket, TicketId};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("statistics need at least one value")]
    EmptyInput,
    #[error("ticket {0} is not resolved")]
    NotResolved(TicketId),
    #[error("`{0}` is not a duration of the form <days>d:<hh>h")]
    BadDuration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionStats {
    pub median: f64,
    pub max: f64,
    pub avg: f64,
    pub std: f64,
}

pub fn distribution_stats(counts: &[u64]) -> Result<DistributionStats, MetricsError> {
    if counts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let avg = sorted.iter().sum::<u64>() as f64 / n as f64;
    let var = sorted.iter().map(|&x| (x as f64 - avg).powi(2)).sum::<f64>() / n as f64;
    Ok(DistributionStats {
        median,
        max: sorted[n - 1] as f64,
        avg,
        std: var.sqrt(),
    })
}

/// `value` rounded half away from zero to two decimals, as text.
pub fn fmt2(value: f64) -> String {
    format!("{:.2}", (value * 100.0).round() / 100.0)
}

/// `num / den` rounded half away from zero to two decimals, computed exactly.
pub fn ratio2(num: u64, den: u64) -> String {
    assert!(den > 0, "ratio with zero denominator");
    let scaled = num as u128 * 100;
    let (q, r) = (scaled / den as u128, scaled % den as u128);
    let q = if 2 * r >= den as u128 { q + 1 } else { q };
    format!("{}.{:02}", q / 100, q % 100)
}

/// `<days>d:<hh>h`, minutes truncated.
pub fn format_duration(d: Duration) -> String {
    let hours = d.num_hours().max(0);
    format!("{}d:{:02}h", hours / 24, hours % 24)
}

pub fn parse_duration(s: &str) -> Result<Duration, MetricsError> {
    let bad = || MetricsError::BadDuration(s.to_owned());
    let (days, rest) = s.split_once("d:").ok_or_else(bad)?;
    let hh = rest.strip_suffix('h').ok_or_else(bad)?;
    if hh.len() != 2 || days.is_empty() || !days.bytes().all(|b| b.is_ascii_digit()) || !hh.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let (days, hh): (i64, i64) = (days.parse().map_err(|_| bad())?, hh.parse().map_err(|_| bad())?);
    if hh >= 24 {
        return Err(bad());
    }
    Ok(Duration::hours(days * 24 + hh))
}

/// Last transition into Done minus creation.
pub fn resolution_time(ticket: &Ticket) -> Result<Duration, MetricsError> {
    ticket
        .resolved_at()
        .map(|r| r - ticket.created_at())
        .ok_or_else(|| MetricsError::NotResolved(ticket.id().clone()))
}

fn mean(durations: &[Duration]) -> Duration {
    if durations.is_empty() {
        return Duration::zero();
    }
    Duration::seconds(durations.iter().map(|d| d.num_seconds()).sum::<i64>() / durations.len() as i64)
}

/// Mean resolution time per final assignee; engineers with nothing resolved
/// are omitted.
pub fn per_engineer_avg_time<'a>(tickets: impl IntoIterator<Item = &'a Ticket>) -> BTreeMap<EngineerId, Duration> {
    let mut grouped: BTreeMap<EngineerId, Vec<Duration>> = BTreeMap::new();
    for t in tickets {
        if let (Some(e), Ok(d)) = (t.assignee(), resolution_time(t)) {
            grouped.entry(e.clone()).or_default().push(d);
        }
    }
    grouped.into_iter().map(|(e, ds)| (e, mean(&ds))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub team_id: String,
    pub period: String,
    pub tickets_total: u64,
    pub engineers: u64,
    pub per_engineer: BTreeMap<EngineerId, u64>,
    pub median: f64,
    pub max: f64,
    pub avg: f64,
    pub std: f64,
}

impl DistributionReport {
    /// Resolved tickets per final assignee. `roster` engineers appear even
    /// with zero tickets.
    pub fn build<'a>(
        team_id: &str,
        period: &str,
        tickets: impl IntoIterator<Item = &'a Ticket>,
        roster: &[EngineerId],
    ) -> Result<Self, MetricsError> {
        let mut per_engineer: BTreeMap<EngineerId, u64> = roster.iter().map(|e| (e.clone(), 0)).collect();
        for t in tickets.into_iter().filter(|t| t.is_done()) {
            if let Some(e) = t.assignee() {
                *per_engineer.entry(e.clone()).or_default() += 1;
            }
        }
        let counts: Vec<u64> = per_engineer.values().copied().collect();
        let stats = distribution_stats(&counts)?;
        Ok(DistributionReport {
            team_id: team_id.into(),
            period: period.into(),
            tickets_total: counts.iter().sum(),
            engineers: counts.len() as u64,
            per_engineer,
            median: stats.median,
            max: stats.max,
            avg: stats.avg,
            std: stats.std,
        })
    }

    /// The average rendered exactly from the integer ratio.
    pub fn avg_text(&self) -> String {
        ratio2(self.tickets_total, self.engineers)
    }

    pub fn csv_header() -> [&'static str; 8] {
        ["team", "period", "tickets", "engineers", "median", "max", "avg", "std"]
    }

    pub fn csv_record(&self) -> [String; 8] {
        [
            self.team_id.clone(),
            self.period.clone(),
            self.tickets_total.to_string(),
            self.engineers.to_string(),
            fmt2(self.median),
            format!("{}", self.max as u64),
            self.avg_text(),
            fmt2(self.std),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionReport {
    pub team_id: String,
    pub period: String,
    pub tickets: u64,
    /// Seconds.
    pub avg_resolution: i64,
    pub formatted: String,
    /// Seconds per engineer.
    pub per_engineer_avg: BTreeMap<EngineerId, i64>,
}

impl ResolutionReport {
    pub fn build<'a>(team_id: &str, period: &str, tickets: impl IntoIterator<Item = &'a Ticket> + Clone) -> Self {
        let durations: Vec<Duration> = tickets.clone().into_iter().filter_map(|t| resolution_time(t).ok()).collect();
        let avg = mean(&durations);
        ResolutionReport {
            team_id: team_id.into(),
            period: period.into(),
            tickets: durations.len() as u64,
            avg_resolution: avg.num_seconds(),
            formatted: format_duration(avg),
            per_engineer_avg: per_engineer_avg_time(tickets).into_iter().map(|(e, d)| (e, d.num_seconds())).collect(),
        }
    }

    pub fn avg(&self) -> Duration {
        Duration::seconds(self.avg_resolution)
    }

    pub fn csv_header() -> [&'static str; 4] {
        ["team", "period", "avg_hours", "formatted"]
    }

    pub fn csv_record(&self) -> [String; 4] {
        [
            self.team_id.clone(),
            self.period.clone(),
            fmt2(self.avg_resolution as f64 / 3600.0),
            self.formatted.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodReport {
    pub distribution: DistributionReport,
    pub resolution: ResolutionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub team_id: String,
    pub pre: PeriodReport,
    pub post: PeriodReport,
    pub median_delta: f64,
    pub max_delta: f64,
    pub avg_delta: f64,
    pub std_delta: f64,
    /// Seconds.
    pub resolution_delta: i64,
    pub std_reduced: bool,
    pub resolution_reduced: bool,
}

pub fn compare_periods(pre: PeriodReport, post: PeriodReport) -> ComparisonReport {
    let (a, b) = (&pre.distribution, &post.distribution);
    let resolution_delta = post.resolution.avg_resolution - pre.resolution.avg_resolution;
    ComparisonReport {
        team_id: a.team_id.clone(),
        median_delta: b.median - a.median,
        max_delta: b.max - a.max,
        avg_delta: b.avg - a.avg,
        std_delta: b.std - a.std,
        resolution_delta,
        std_reduced: b.std < a.std,
        resolution_reduced: resolution_delta < 0,
        pre,
        post,
    }
}

impl ComparisonReport {
    /// Distribution table followed by resolution table, pre and post side by
    /// side.
    pub fn render_table(&self) -> String {
        let mut out = distribution_table(&[(&self.pre.distribution, &self.post.distribution)]);
        out.push('\n');
        out.push_str(&resolution_table(&[(&self.pre.resolution, &self.post.resolution)]));
        let _ = writeln!(out, "\nstd (population) delta: {}  std_reduced={}", fmt2(self.std_delta), self.std_reduced);
        let _ = writeln!(
            out,
            "avg resolution delta:   {:.2}h  resolution_reduced={}",
            self.resolution_delta as f64 / 3600.0,
            self.resolution_reduced
        );
        out
    }
}

fn dist_cells(d: &DistributionReport) -> Vec<String> {
    vec![
        d.tickets_total.to_string(),
        d.engineers.to_string(),
        fmt2(d.median),
        format!("{}", d.max as u64),
        d.avg_text(),
        fmt2(d.std),
    ]
}

fn render_grid(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        }
    }
    out
}

/// Pre/post distribution rows in the layout of a pre-vs-post comparison table.
pub fn distribution_table(rows: &[(&DistributionReport, &DistributionReport)]) -> String {
    let mut grid = vec![{
        let mut h = vec!["Team".to_string()];
        for side in ["pre", "post"] {
            for col in ["#tickets", "#engg", "median", "max", "avg", "std"] {
                h.push(format!("{side} {col}"));
            }
        }
        h
    }];
    for (pre, post) in rows {
        let mut r = vec![pre.team_id.clone()];
        r.extend(dist_cells(pre));
        r.extend(dist_cells(post));
        grid.push(r);
    }
    render_grid(&grid)
}

pub fn resolution_table(rows: &[(&ResolutionReport, &ResolutionReport)]) -> String {
    let mut grid = vec![vec!["Team".to_string(), "Pre bot".into(), "Post bot".into()]];
    for (pre, post) in rows {
        grid.push(vec![pre.team_id.clone(), pre.formatted.clone(), post.formatted.clone()]);
    }
    render_grid(&grid)
}

/// One row per period.
pub fn period_table(reports: &[PeriodReport]) -> String {
    let mut grid = vec![["Team", "Period", "#tickets", "#engg", "median", "max", "avg", "std", "avg resolution"]
        .map(String::from)
        .to_vec()];
    for r in reports {
        let mut row = vec![r.distribution.team_id.clone(), r.distribution.period.clone()];
        row.extend(dist_cells(&r.distribution));
        row.push(r.resolution.formatted.clone());
        grid.push(row);
    }
    render_grid(&grid)
}

pub fn distribution_csv(reports: &[&DistributionReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DistributionReport::csv_header()).expect("in-memory write");
    for r in reports {
        w.write_record(r.csv_record()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn resolution_csv(reports: &[&ResolutionReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ResolutionReport::csv_header()).expect("in-memory write");
    for r in reports {
        w.write_record(r.csv_record()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Splits resolved tickets into periods by resolution time. With no
/// boundaries there is one period `All`; with one, `PreBot` and `PostBot`;
/// otherwise `P1..Pn`. Open tickets are dropped.
pub fn split_periods<'a>(tickets: impl IntoIterator<Item = &'a Ticket>, boundaries: &[Timestamp]) -> Vec<(String, Vec<&'a Ticket>)> {
    let mut bounds = boundaries.to_vec();
    bounds.sort();
    let labels: Vec<String> = match bounds.len() {
        0 => vec!["All".into()],
        1 => vec!["PreBot".into(), "PostBot".into()],
        n => (1..=n + 1).map(|i| format!("P{i}")).collect(),
    };
    let mut out: Vec<(String, Vec<&Ticket>)> = labels.into_iter().map(|l| (l, Vec::new())).collect();
    for t in tickets {
        if let Some(r) = t.resolved_at() {
            let idx = bounds.partition_point(|b| *b <= r);
            out[idx].1.push(t);
        }
    }
    out
}
