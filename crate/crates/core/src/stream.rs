//! Time-sorted event streams with nanosecond timestamps.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::model::NANOS_PER_SEC;

/// One row of the event CSV (`timestamp_ns,type`, type 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub timestamp_ns: i64,
    #[serde(rename = "type")]
    pub event_type: usize,
}

/// Strictly increasing events on the observation window `[start_ns, end_ns]`.
///
/// Types are stored 0-based; all public constructors and the CSV format
/// use 1-based types.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    m: usize,
    start_ns: i64,
    end_ns: i64,
    times: Vec<i64>,
    types: Vec<usize>,
}

impl EventStream {
    pub fn new(m: usize, start_ns: i64, end_ns: i64, events: &[EventRecord]) -> Result<Self> {
        if m == 0 {
            return Err(HawkesError::InvalidStream("dimension must be >= 1".into()));
        }
        if end_ns < start_ns {
            return Err(HawkesError::InvalidStream(format!(
                "window end {end_ns} precedes start {start_ns}"
            )));
        }
        let mut times = Vec::with_capacity(events.len());
        let mut types = Vec::with_capacity(events.len());
        let mut prev: Option<i64> = None;
        for (n, ev) in events.iter().enumerate() {
            if ev.event_type == 0 || ev.event_type > m {
                return Err(HawkesError::InvalidEventType { got: ev.event_type, m });
            }
            if let Some(p) = prev {
                if ev.timestamp_ns <= p {
                    return Err(HawkesError::InvalidStream(format!(
                        "timestamps not strictly increasing at event {n} ({} after {p})",
                        ev.timestamp_ns
                    )));
                }
            }
            if ev.timestamp_ns < start_ns || ev.timestamp_ns > end_ns {
                return Err(HawkesError::InvalidStream(format!(
                    "event {n} at {} outside window [{start_ns}, {end_ns}]",
                    ev.timestamp_ns
                )));
            }
            prev = Some(ev.timestamp_ns);
            times.push(ev.timestamp_ns);
            types.push(ev.event_type - 1);
        }
        Ok(EventStream { m, start_ns, end_ns, times, types })
    }

    /// Builds a stream from times in seconds after the window start (0).
    /// Times are rounded to the nanosecond; collisions after rounding are
    /// pushed forward by 1 ns.
    pub fn from_seconds(m: usize, times: &[f64], types_1based: &[usize], horizon: f64) -> Result<Self> {
        if times.len() != types_1based.len() {
            return Err(HawkesError::DimensionMismatch("times and types differ in length".into()));
        }
        let mut events = Vec::with_capacity(times.len());
        let mut last = i64::MIN;
        for (&t, &ty) in times.iter().zip(types_1based) {
            let mut ns = (t * NANOS_PER_SEC).round() as i64;
            if ns <= last {
                ns = last + 1;
            }
            last = ns;
            events.push(EventRecord { timestamp_ns: ns, event_type: ty });
        }
        let end = ((horizon * NANOS_PER_SEC).round() as i64).max(last.max(0));
        Self::new(m, 0, end, &events)
    }

    pub fn empty(m: usize, start_ns: i64, end_ns: i64) -> Result<Self> {
        Self::new(m, start_ns, end_ns, &[])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start_ns(&self) -> i64 {
        self.start_ns
    }

    pub fn end_ns(&self) -> i64 {
        self.end_ns
    }

    pub fn times_ns(&self) -> &[i64] {
        &self.times
    }

    /// 0-based event types.
    pub fn types(&self) -> &[usize] {
        &self.types
    }

    /// Window length in seconds.
    pub fn horizon(&self) -> f64 {
        (self.end_ns - self.start_ns) as f64 / NANOS_PER_SEC
    }

    /// Time of event `n` in seconds since the window start.
    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        (self.times[n] - self.start_ns) as f64 / NANOS_PER_SEC
    }

    /// All event times in seconds since the window start.
    pub fn times_sec(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    /// Number of events per type.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.m];
        for &t in &self.types {
            c[t] += 1;
        }
        c
    }

    pub fn records(&self) -> Vec<EventRecord> {
        self.times
            .iter()
            .zip(&self.types)
            .map(|(&t, &ty)| EventRecord { timestamp_ns: t, event_type: ty + 1 })
            .collect()
    }

    /// Same events and window shifted by `delta_ns`.
    pub fn shifted(&self, delta_ns: i64) -> Self {
        EventStream {
            m: self.m,
            start_ns: self.start_ns + delta_ns,
            end_ns: self.end_ns + delta_ns,
            times: self.times.iter().map(|t| t + delta_ns).collect(),
            types: self.types.clone(),
        }
    }

    /// First `n` events, with the window closed at the n-th event.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let end = if n == 0 { self.start_ns } else { self.times[n - 1] };
        EventStream {
            m: self.m,
            start_ns: self.start_ns,
            end_ns: end,
            times: self.times[..n].to_vec(),
            types: self.types[..n].to_vec(),
        }
    }

    /// Same events on a different window.
    pub fn with_window(&self, start_ns: i64, end_ns: i64) -> Result<Self> {
        Self::new(self.m, start_ns, end_ns, &self.records())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in self.records() {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads `timestamp_ns,type` rows. `m` defaults to the largest type seen;
    /// the window defaults to the first and last timestamps.
    pub fn read_csv<R: Read>(r: R, m: Option<usize>, window: Option<(i64, i64)>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut events = Vec::new();
        for rec in rdr.deserialize() {
            let rec: EventRecord = rec?;
            events.push(rec);
        }
        let m = m.unwrap_or_else(|| events.iter().map(|e| e.event_type).max().unwrap_or(1));
        let (start, end) = window.unwrap_or_else(|| match (events.first(), events.last()) {
            (Some(a), Some(b)) => (a.timestamp_ns, b.timestamp_ns),
            _ => (0, 0),
        });
        Self::new(m, start, end, &events)
    }

    pub fn read_csv_path(path: impl AsRef<Path>, m: Option<usize>, window: Option<(i64, i64)>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, m, window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: i64, ty: usize) -> EventRecord {
        EventRecord { timestamp_ns: t, event_type: ty }
    }

    #[test]
    fn rejects_unsorted_and_bad_types() {
        assert!(EventStream::new(2, 0, 10, &[rec(5, 1), rec(5, 2)]).is_err());
        assert!(EventStream::new(2, 0, 10, &[rec(5, 3)]).is_err());
        assert!(EventStream::new(2, 0, 4, &[rec(5, 1)]).is_err());
        assert!(EventStream::new(2, 0, 10, &[rec(1, 1), rec(5, 2)]).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let s = EventStream::new(2, 100, 900, &[rec(100, 1), rec(250, 2), rec(900, 1)]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp_ns,type\n100,1\n"));
        let back = EventStream::read_csv(&buf[..], Some(2), None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn seconds_conversion_and_collisions() {
        let s = EventStream::from_seconds(1, &[0.5, 0.5, 1.25], &[1, 1, 1], 2.0).unwrap();
        assert_eq!(s.times_ns(), &[500_000_000, 500_000_001, 1_250_000_000]);
        assert_eq!(s.horizon(), 2.0);
        assert_eq!(s.time(2), 1.25);
    }

    #[test]
    fn truncation_closes_window() {
        let s = EventStream::from_seconds(1, &[1.0, 2.0, 3.0], &[1, 1, 1], 5.0).unwrap();
        let t = s.truncated(2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.horizon(), 2.0);
    }
}
