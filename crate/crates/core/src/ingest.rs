//! Quote files to up/down mid-price event streams.
//!
//! Input CSV header: `timestamp_ns,bid,ask`. Prices are parsed as exact
//! decimals, and mid changes are detected on `bid + ask`.

use std::io::Read;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::stream::{EventRecord, EventStream};
use crate::SCHEMA_VERSION;

pub const UP: usize = 1;
pub const DOWN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuoteRecord {
    pub timestamp_ns: i64,
    pub bid: Decimal,
    pub ask: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub schema_version: u32,
    pub rows_read: usize,
    pub malformed: Vec<RowError>,
    pub crossed_dropped: usize,
    pub outside_window: usize,
    pub events_up: usize,
    pub events_down: usize,
    pub duplicates_collapsed: usize,
    pub shifted: usize,
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<QuoteRecord, String> {
    if rec.len() != 3 {
        return Err(format!("expected 3 fields, found {}", rec.len()));
    }
    let timestamp_ns = rec[0].trim().parse::<i64>().map_err(|e| format!("timestamp '{}': {e}", &rec[0]))?;
    let bid = rec[1].trim().parse::<Decimal>().map_err(|e| format!("bid '{}': {e}", &rec[1]))?;
    let ask = rec[2].trim().parse::<Decimal>().map_err(|e| format!("ask '{}': {e}", &rec[2]))?;
    if bid <= Decimal::ZERO {
        return Err(format!("bid {bid} is not positive"));
    }
    Ok(QuoteRecord { timestamp_ns, bid, ask })
}

/// Reads quotes; malformed rows are reported with their line numbers and skipped.
pub fn read_quotes<R: Read>(r: R) -> Result<(Vec<QuoteRecord>, Vec<RowError>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != ["timestamp_ns", "bid", "ask"] {
        return Err(HawkesError::InvalidStream(format!(
            "quote header must be timestamp_ns,bid,ask; found {}",
            names.join(",")
        )));
    }
    let mut quotes = Vec::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                match parse_row(&rec) {
                    Ok(q) => quotes.push(q),
                    Err(message) => errors.push(RowError { line, message }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError { line, message: e.to_string() });
            }
        }
    }
    Ok((quotes, errors))
}

/// Collapses equal-timestamp events of one type and shifts later
/// different-type events by 1 ns, keeping file order. Returns the events
/// and the number of collapsed and shifted records.
pub fn dedupe_and_order(events: &[EventRecord]) -> (Vec<EventRecord>, usize, usize) {
    let mut out: Vec<EventRecord> = Vec::with_capacity(events.len());
    let mut group_ts = i64::MIN;
    let mut group_types: Vec<usize> = Vec::new();
    let mut collapsed = 0;
    let mut shifted = 0;
    for e in events {
        if e.timestamp_ns != group_ts {
            group_ts = e.timestamp_ns;
            group_types.clear();
        } else if group_types.contains(&e.event_type) {
            collapsed += 1;
            continue;
        }
        group_types.push(e.event_type);
        let mut t = e.timestamp_ns;
        if let Some(last) = out.last() {
            if t <= last.timestamp_ns {
                t = last.timestamp_ns + 1;
                shifted += 1;
            }
        }
        out.push(EventRecord { timestamp_ns: t, event_type: e.event_type });
    }
    (out, collapsed, shifted)
}

/// Up (type 1) and down (type 2) mid-price events; one event per change
/// regardless of its size. `window` is `[start, end)` and defaults to the
/// span of the file (ending 1 ns after the last quote); quotes before it
/// still set the reference mid.
pub fn mid_price_events(quotes: &[QuoteRecord], window: Option<(i64, i64)>) -> Result<(EventStream, IngestReport)> {
    let mut report = IngestReport { schema_version: SCHEMA_VERSION, rows_read: quotes.len(), ..Default::default() };
    if let Some(w) = quotes.windows(2).position(|w| w[1].timestamp_ns < w[0].timestamp_ns) {
        return Err(HawkesError::InvalidStream(format!(
            "quote timestamps decrease at record {} ({} after {})",
            w + 2,
            quotes[w + 1].timestamp_ns,
            quotes[w].timestamp_ns
        )));
    }
    let (start, end) = match window {
        Some((s, e)) if e > s => (s, e),
        Some((s, e)) => return Err(HawkesError::InvalidArgument(format!("empty session window [{s}, {e})"))),
        None => match (quotes.first(), quotes.last()) {
            (Some(f), Some(l)) => (f.timestamp_ns, l.timestamp_ns + 1),
            _ => return Err(HawkesError::InsufficientData("no valid quotes".into())),
        },
    };
    let mut prev: Option<Decimal> = None;
    let mut raw = Vec::new();
    for q in quotes {
        if q.ask < q.bid {
            report.crossed_dropped += 1;
            continue;
        }
        let twice_mid = q.bid + q.ask;
        let inside = q.timestamp_ns >= start && q.timestamp_ns < end;
        if q.timestamp_ns >= end {
            report.outside_window += 1;
            continue;
        }
        if !inside {
            report.outside_window += 1;
        } else if let Some(p) = prev {
            if twice_mid > p {
                raw.push(EventRecord { timestamp_ns: q.timestamp_ns, event_type: UP });
            } else if twice_mid < p {
                raw.push(EventRecord { timestamp_ns: q.timestamp_ns, event_type: DOWN });
            }
        }
        prev = Some(twice_mid);
    }
    let (mut events, collapsed, shifted) = dedupe_and_order(&raw);
    events.retain(|e| e.timestamp_ns <= end);
    report.duplicates_collapsed = collapsed;
    report.shifted = shifted;
    report.events_up = events.iter().filter(|e| e.event_type == UP).count();
    report.events_down = events.len() - report.events_up;
    let stream = EventStream::new(2, start, end, &events)?;
    Ok((stream, report))
}

/// Reads a quote file and converts it; row errors are kept in the report.
pub fn ingest_reader<R: Read>(r: R, window: Option<(i64, i64)>) -> Result<(EventStream, IngestReport)> {
    let (quotes, errors) = read_quotes(r)?;
    let (stream, mut report) = mid_price_events(&quotes, window)?;
    report.rows_read += errors.len();
    report.malformed = errors;
    Ok((stream, report))
}

pub fn ingest_path(path: impl AsRef<Path>, window: Option<(i64, i64)>) -> Result<(EventStream, IngestReport)> {
    ingest_reader(std::fs::File::open(path)?, window)
}
