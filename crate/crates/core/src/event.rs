//! Event and ground-truth ingestion.
//!
//! Events arrive as text, one `t x y p` record per line with `t` in decimal
//! seconds. Timestamps are converted straight from the decimal string to
//! integer microseconds, so no floating-point rounding is involved.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

/// Stream time in integer microseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_micros(us: i64) -> Self {
        Timestamp(us)
    }

    /// Rounds to the nearest microsecond.
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round() as i64)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }
}

impl fmt::Display for Timestamp {
    /// Decimal seconds with six fractional digits, the event-file format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000)
    }
}

impl std::str::FromStr for Timestamp {
    type Err = Error;

    /// Non-negative decimal seconds.
    fn from_str(s: &str) -> Result<Self> {
        parse_seconds(s.trim().as_bytes())
            .ok_or_else(|| Error::Format(format!("invalid timestamp {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    /// Plane index: On = 0, Off = 1.
    pub const fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }
}

/// One retinal event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub u: u16,
    pub v: u16,
    pub p: Polarity,
    pub t: Timestamp,
}

impl Event {
    pub fn new(u: u16, v: u16, p: Polarity, t: Timestamp) -> Self {
        Self { u, v, p, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
}

impl SensorGeometry {
    /// DAVIS240 resolution.
    pub const DAVIS240: SensorGeometry = SensorGeometry {
        width: 240,
        height: 180,
    };

    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 || width > u16::MAX as u32 || height > u16::MAX as u32 {
            return Err(Error::Config(format!(
                "sensor geometry must be within 1..=65535 on both axes, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self::DAVIS240
    }
}

/// Streaming parser over a text event source.
///
/// Yields events in file order and stops after the first error.
pub struct EventReader<R> {
    source: R,
    geometry: SensorGeometry,
    slack_us: i64,
    line: usize,
    last: Option<Timestamp>,
    buf: Vec<u8>,
    failed: bool,
}

/// Parse a text event stream. Timestamp regressions are rejected.
pub fn parse_event_stream<R: BufRead>(source: R, geometry: SensorGeometry) -> EventReader<R> {
    EventReader::new(source, geometry)
}

impl<R: BufRead> EventReader<R> {
    pub fn new(source: R, geometry: SensorGeometry) -> Self {
        Self {
            source,
            geometry,
            slack_us: 0,
            line: 0,
            last: None,
            buf: Vec::with_capacity(64),
            failed: false,
        }
    }

    /// Tolerate timestamp regressions of up to `slack_us`; such events are
    /// clamped to the latest timestamp seen so the output stays ordered.
    pub fn with_slack(mut self, slack_us: i64) -> Self {
        self.slack_us = slack_us.max(0);
        self
    }

    fn next_event(&mut self) -> Result<Option<Event>> {
        loop {
            self.buf.clear();
            let n = self.source.read_until(b'\n', &mut self.buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.line += 1;
            let Some(mut ev) = parse_line(&self.buf, self.line, self.geometry)? else {
                continue;
            };
            if let Some(last) = self.last {
                if ev.t < last {
                    if last.0 - ev.t.0 > self.slack_us {
                        return Err(Error::Ordering {
                            last: last.0,
                            got: ev.t.0,
                        });
                    }
                    ev.t = last;
                }
            }
            self.last = Some(ev.t);
            return Ok(Some(ev));
        }
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_event() {
            Ok(Some(ev)) => Some(Ok(ev)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Parse one record. Blank lines yield `None`.
fn parse_line(raw: &[u8], line: usize, geometry: SensorGeometry) -> Result<Option<Event>> {
    let mut fields = raw
        .split(|b| b.is_ascii_whitespace())
        .filter(|f| !f.is_empty());
    let Some(t_field) = fields.next() else {
        return Ok(None);
    };
    let err = |msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let t = parse_seconds(t_field).ok_or_else(|| err("bad timestamp"))?;
    let u = fields
        .next()
        .and_then(parse_uint)
        .ok_or_else(|| err("bad x coordinate"))?;
    let v = fields
        .next()
        .and_then(parse_uint)
        .ok_or_else(|| err("bad y coordinate"))?;
    let p = match fields.next() {
        Some(b"1") => Polarity::On,
        Some(b"0") => Polarity::Off,
        _ => return Err(err("polarity must be 0 or 1")),
    };
    if fields.next().is_some() {
        return Err(err("expected exactly four fields `t x y p`"));
    }
    if !geometry.contains(u, v) {
        return Err(Error::OutOfBounds {
            line,
            u,
            v,
            width: geometry.width,
            height: geometry.height,
        });
    }
    Ok(Some(Event {
        u: u as u16,
        v: v as u16,
        p,
        t,
    }))
}

fn parse_uint(field: &[u8]) -> Option<u32> {
    if field.is_empty() || field.len() > 9 {
        return None;
    }
    field.iter().try_fold(0u32, |acc, &b| {
        b.is_ascii_digit().then(|| acc * 10 + (b - b'0') as u32)
    })
}

/// Decimal seconds to microseconds, rounding half up on the seventh digit.
fn parse_seconds(field: &[u8]) -> Option<Timestamp> {
    let (int_part, frac_part) = match field.iter().position(|&b| b == b'.') {
        Some(dot) => (&field[..dot], &field[dot + 1..]),
        None => (field, &field[..0]),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if int_part.len() > 12 || !int_part.iter().all(u8::is_ascii_digit) {
        return parse_seconds_fallback(field);
    }
    if !frac_part.iter().all(u8::is_ascii_digit) {
        return parse_seconds_fallback(field);
    }
    let secs = int_part
        .iter()
        .fold(0i64, |acc, &b| acc * 10 + (b - b'0') as i64);
    let mut micros = 0i64;
    for i in 0..6 {
        let d = frac_part.get(i).map_or(0, |&b| (b - b'0') as i64);
        micros = micros * 10 + d;
    }
    if frac_part.get(6).is_some_and(|&b| b >= b'5') {
        micros += 1;
    }
    Some(Timestamp(secs * 1_000_000 + micros))
}

// Scientific notation and other rarities.
fn parse_seconds_fallback(field: &[u8]) -> Option<Timestamp> {
    let s = std::str::from_utf8(field).ok()?;
    let v: f64 = s.parse().ok()?;
    (v.is_finite() && v >= 0.0).then(|| Timestamp::from_secs_f64(v))
}

/// Write events in the text format accepted by [`parse_event_stream`].
pub fn write_events<'a, W: Write>(
    mut out: W,
    events: impl IntoIterator<Item = &'a Event>,
) -> std::io::Result<()> {
    for e in events {
        let p = match e.p {
            Polarity::On => 1,
            Polarity::Off => 0,
        };
        writeln!(out, "{} {} {} {}", e.t, e.u, e.v, p)?;
    }
    Ok(())
}

/// Labelled boxes for one object, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrack {
    pub id: u32,
    pub entries: Vec<(Timestamp, BoundingBox)>,
}

impl GroundTruthTrack {
    pub fn first_time(&self) -> Option<Timestamp> {
        self.entries.first().map(|e| e.0)
    }

    pub fn last_time(&self) -> Option<Timestamp> {
        self.entries.last().map(|e| e.0)
    }

    /// Position and size linearly interpolated to `t`; `None` outside the
    /// labelled time span.
    pub fn box_at(&self, t: Timestamp) -> Option<BoundingBox> {
        let first = self.entries.first()?;
        let last = self.entries.last()?;
        if t < first.0 || t > last.0 {
            return None;
        }
        let idx = self.entries.partition_point(|(et, _)| *et <= t);
        if idx == 0 {
            return Some(first.1);
        }
        let (t0, b0) = self.entries[idx - 1];
        if t0 == t || idx == self.entries.len() {
            return Some(b0);
        }
        let (t1, b1) = self.entries[idx];
        let s = (t.0 - t0.0) as f64 / (t1.0 - t0.0) as f64;
        Some(b0.lerp(&b1, s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tracks: Vec<GroundTruthTrack>,
    /// Set when some track's rows were out of time order in the source.
    pub resorted: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthRow {
    object_id: u32,
    t: f64,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

/// Parse `object_id,t,x,y,w,h` CSV (with header) into per-object tracks.
pub fn parse_ground_truth<R: Read>(source: R) -> Result<GroundTruth> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let expected = ["object_id", "t", "x", "y", "w", "h"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Format(format!(
            "expected header `object_id,t,x,y,w,h`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut grouped: BTreeMap<u32, Vec<(Timestamp, BoundingBox)>> = BTreeMap::new();
    for (i, row) in reader.deserialize::<GroundTruthRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.w <= 0.0 || row.h <= 0.0 {
            return Err(Error::Format(format!(
                "line {line}: box size must be positive, got {}x{}",
                row.w, row.h
            )));
        }
        if !row.t.is_finite() || row.t < 0.0 {
            return Err(Error::Format(format!(
                "line {line}: bad timestamp {}",
                row.t
            )));
        }
        let bbox = BoundingBox::new(row.x, row.y, row.w, row.h)
            .map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        grouped
            .entry(row.object_id)
            .or_default()
            .push((Timestamp::from_secs_f64(row.t), bbox));
    }
    let mut resorted = false;
    let tracks = grouped
        .into_iter()
        .map(|(id, mut entries)| {
            if entries.windows(2).any(|w| w[1].0 < w[0].0) {
                resorted = true;
                entries.sort_by_key(|e| e.0);
            }
            GroundTruthTrack { id, entries }
        })
        .collect();
    Ok(GroundTruth { tracks, resorted })
}

pub fn write_ground_truth<W: Write>(out: W, tracks: &[GroundTruthTrack]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for track in tracks {
        for (t, b) in &track.entries {
            writer.serialize(GroundTruthRow {
                object_id: track.id,
                t: t.as_secs_f64(),
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
            })?;
        }
    }
    if tracks.iter().all(|t| t.entries.is_empty()) {
        writer.write_record(["object_id", "t", "x", "y", "w", "h"])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_all(text: &str) -> Result<Vec<Event>> {
        parse_event_stream(text.as_bytes(), SensorGeometry::DAVIS240).collect()
    }

    #[test]
    fn parses_dataset_line() {
        let evs = parse_all("0.003811000 96 133 0\n").unwrap();
        assert_eq!(
            evs,
            vec![Event::new(96, 133, Polarity::Off, Timestamp(3811))]
        );
    }

    #[test]
    fn u_equal_to_width_is_out_of_bounds() {
        let err = parse_all("1.5 240 10 1\n").unwrap_err();
        assert!(matches!(
            err,
            Error::OutOfBounds {
                line: 1,
                u: 240,
                ..
            }
        ));
    }

    #[test]
    fn empty_source_yields_nothing() {
        assert!(parse_all("").unwrap().is_empty());
        assert!(parse_all("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_all("0.1 1 1 1\n0.2 x 1 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_all("0.1 1 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_all("0.1 1 1 1 9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn regression_is_rejected_without_slack() {
        let err = parse_all("0.2 1 1 1\n0.1 1 1 1\n").unwrap_err();
        assert!(matches!(
            err,
            Error::Ordering {
                last: 200000,
                got: 100000
            }
        ));
    }

    #[test]
    fn regression_within_slack_is_clamped() {
        let src = "0.000200 1 1 1\n0.000150 2 1 1\n0.000300 3 1 0\n";
        let evs: Vec<_> = parse_event_stream(src.as_bytes(), SensorGeometry::DAVIS240)
            .with_slack(100)
            .collect::<Result<_>>()
            .unwrap();
        let ts: Vec<_> = evs.iter().map(|e| e.t.0).collect();
        assert_eq!(ts, vec![200, 200, 300]);
    }

    #[test]
    fn sub_microsecond_digits_round() {
        let evs = parse_all("1.0000004 0 0 1\n1.0000005 0 0 1\n7 0 0 1\n3e0 0 0 1\n");
        // 3e0 < 7 so the last line is a regression
        assert!(evs.is_err());
        let evs = parse_all("1.0000004 0 0 1\n1.0000005 0 0 1\n7 0 0 1\n").unwrap();
        let ts: Vec<_> = evs.iter().map(|e| e.t.0).collect();
        assert_eq!(ts, vec![1_000_000, 1_000_001, 7_000_000]);
    }

    #[test]
    fn timestamp_display() {
        assert_eq!(Timestamp(3811).to_string(), "0.003811");
        assert_eq!(Timestamp(12_000_001).to_string(), "12.000001");
    }

    #[test]
    fn ground_truth_single_row() {
        let gt = parse_ground_truth("object_id,t,x,y,w,h\n0,0.1,10,20,30,40\n".as_bytes()).unwrap();
        assert_eq!(gt.tracks.len(), 1);
        assert_eq!(gt.tracks[0].entries.len(), 1);
        let (t, b) = gt.tracks[0].entries[0];
        assert_eq!(t, Timestamp(100_000));
        assert_eq!((b.x, b.y, b.w, b.h), (10.0, 20.0, 30.0, 40.0));
        assert!(!gt.resorted);
    }

    #[test]
    fn ground_truth_groups_and_sorts() {
        let src =
            "object_id,t,x,y,w,h\n1,0.2,0,0,5,5\n0,0.1,0,0,5,5\n1,0.1,1,0,5,5\n0,0.3,0,0,5,5\n";
        let gt = parse_ground_truth(src.as_bytes()).unwrap();
        assert_eq!(gt.tracks.len(), 2);
        assert_eq!(gt.tracks[0].id, 0);
        assert_eq!(gt.tracks[1].id, 1);
        for tr in &gt.tracks {
            assert!(tr.entries.windows(2).all(|w| w[0].0 <= w[1].0));
        }
        assert!(gt.resorted);
    }

    #[test]
    fn ground_truth_negative_size() {
        let err =
            parse_ground_truth("object_id,t,x,y,w,h\n0,0.1,10,20,-5,40\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn ground_truth_interpolates() {
        let track = GroundTruthTrack {
            id: 0,
            entries: vec![
                (
                    Timestamp(0),
                    BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                ),
                (
                    Timestamp(100),
                    BoundingBox::new(10.0, 0.0, 20.0, 10.0).unwrap(),
                ),
            ],
        };
        let b = track.box_at(Timestamp(25)).unwrap();
        assert_eq!((b.x, b.w), (2.5, 12.5));
        assert!(track.box_at(Timestamp(101)).is_none());
        assert_eq!(track.box_at(Timestamp(100)).unwrap().x, 10.0);
    }

    fn arb_event() -> impl Strategy<Value = (u16, u16, bool, i64)> {
        (0u16..240, 0u16..180, any::<bool>(), 0i64..1_000_000)
    }

    proptest! {
        #[test]
        fn text_round_trip(raw in proptest::collection::vec(arb_event(), 0..200)) {
            let mut t = 0;
            let events: Vec<Event> = raw
                .into_iter()
                .map(|(u, v, on, dt)| {
                    t += dt;
                    let p = if on { Polarity::On } else { Polarity::Off };
                    Event::new(u, v, p, Timestamp(t))
                })
                .collect();
            let mut buf = Vec::new();
            write_events(&mut buf, &events).unwrap();
            let back: Vec<Event> = parse_event_stream(buf.as_slice(), SensorGeometry::DAVIS240)
                .collect::<Result<_>>()
                .unwrap();
            prop_assert_eq!(back, events);
        }
    }
}
