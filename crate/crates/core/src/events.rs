//! Events, streams, the observation domain and local-history lookups.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Observation window `[0, t_end) × s_bounds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    t_end: f64,
    s_bounds: Rect,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainRepr {
    t_end: f64,
    s_bounds: Rect,
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;
    fn try_from(r: DomainRepr) -> Result<Self> {
        Domain::new(r.t_end, r.s_bounds)
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr { t_end: d.t_end, s_bounds: d.s_bounds }
    }
}

impl Domain {
    pub fn new(t_end: f64, s_bounds: Rect) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidDomain(format!("t_end must be positive, got {t_end}")));
        }
        if !(s_bounds.x1 > s_bounds.x0 && s_bounds.y1 > s_bounds.y0) {
            return Err(Error::InvalidDomain(format!("degenerate spatial bounds {s_bounds:?}")));
        }
        Ok(Domain { t_end, s_bounds })
    }

    /// `[0,t_end) × [0,1]²`.
    pub fn unit(t_end: f64) -> Result<Self> {
        Domain::new(t_end, Rect::unit())
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn s_bounds(&self) -> &Rect {
        &self.s_bounds
    }

    pub fn area(&self) -> f64 {
        self.s_bounds.area()
    }

    pub fn with_horizon(&self, t_end: f64) -> Result<Self> {
        Domain::new(t_end, self.s_bounds)
    }

    /// Closed ℓ∞ ball of radius `delta` around `s`, clipped to `S`.
    pub fn neighborhood(&self, s: [f64; 2], delta: f64) -> Rect {
        Rect::square(s, delta).intersect(&self.s_bounds)
    }

    pub fn contains(&self, e: &Event) -> bool {
        e.t >= 0.0 && e.t < self.t_end && self.s_bounds.contains(e.s)
    }
}

/// A single observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub s: [f64; 2],
}

impl Event {
    pub const fn new(t: f64, s1: f64, s2: f64) -> Self {
        Event { t, s: [s1, s2] }
    }

    pub fn linf(&self, s: [f64; 2]) -> f64 {
        (self.s[0] - s[0]).abs().max((self.s[1] - s[1]).abs())
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    s1: f64,
    s2: f64,
}

/// Events sorted by strictly increasing time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EventStream {
    events: Vec<Event>,
}

impl EventStream {
    /// Validates ordering and finiteness.
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !(e.t.is_finite() && e.s[0].is_finite() && e.s[1].is_finite()) {
                return Err(Error::InvalidStream(format!("non-finite event at row {i}")));
            }
        }
        if let Some(i) = events.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(Error::InvalidStream(format!(
                "times must be strictly increasing (rows {} and {}: {} then {})",
                i,
                i + 1,
                events[i].t,
                events[i + 1].t
            )));
        }
        Ok(EventStream { events })
    }

    /// Like [`EventStream::new`] and additionally checks every event lies in `domain`.
    pub fn within(events: Vec<Event>, domain: &Domain) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| !domain.contains(e)) {
            return Err(Error::InvalidStream(format!("event {e:?} lies outside the domain")));
        }
        Self::new(events)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Events with `t < t_end`.
    pub fn truncated(&self, t_end: f64) -> EventStream {
        let n = self.events.partition_point(|e| e.t < t_end);
        EventStream { events: self.events[..n].to_vec() }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().map(str::trim).ne(["t", "s1", "s2"]) {
            return Err(Error::InvalidStream(format!(
                "expected header t,s1,s2, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut events = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let r = row?;
            events.push(Event::new(r.t, r.s1, r.s2));
        }
        Self::new(events)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.events {
            w.serialize(CsvRow { t: e.t, s1: e.s[0], s2: e.s[1] })?;
        }
        if self.events.is_empty() {
            w.write_record(["t", "s1", "s2"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

impl<'de> Deserialize<'de> for EventStream {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            events: Vec<Event>,
        }
        let raw = Raw::deserialize(d)?;
        EventStream::new(raw.events).map_err(serde::de::Error::custom)
    }
}

/// An event in (inter-arrival, location) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedEvent {
    pub dt: f64,
    pub s: [f64; 2],
}

/// Which prior events define `t_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryFilter {
    /// Most recent prior event anywhere.
    Global,
    /// Most recent prior event within ℓ∞ distance `delta`.
    Local { delta: f64 },
}

/// `(t − t_n, s)` for the event at `index` (0-based); `t_n = 0` without a qualifying predecessor.
pub fn transform_event(stream: &EventStream, index: usize, filter: HistoryFilter) -> Result<TransformedEvent> {
    let ev = stream.events();
    let x = ev
        .get(index)
        .ok_or(Error::IndexOutOfRange { index, len: ev.len() })?;
    let prior = ev[..index].iter().rev();
    let t_n = match filter {
        HistoryFilter::Global => prior.map(|e| e.t).next(),
        HistoryFilter::Local { delta } => prior.filter(|e| e.linf(x.s) <= delta).map(|e| e.t).next(),
    }
    .unwrap_or(0.0);
    Ok(TransformedEvent { dt: x.t - t_n, s: x.s })
}

/// Append-only spatial bucket index over a growing event list.
///
/// Buckets hold event indices in increasing order, so "prior to index i"
/// queries are a binary search per bucket.
#[derive(Debug, Clone)]
pub struct LocalIndex {
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<u32>>,
}

impl LocalIndex {
    pub fn new(bounds: &Rect, cell: f64) -> Self {
        let cell = cell.max(1e-6);
        let nx = ((bounds.width() / cell).ceil() as usize).clamp(1, 2048);
        let ny = ((bounds.height() / cell).ceil() as usize).clamp(1, 2048);
        LocalIndex {
            origin: [bounds.x0, bounds.y0],
            cell: cell.max(bounds.width() / nx as f64).max(bounds.height() / ny as f64),
            dims: [nx, ny],
            buckets: vec![Vec::new(); nx * ny],
        }
    }

    /// Builds an index holding every event of `events`.
    pub fn build(events: &[Event], bounds: &Rect, cell: f64) -> Self {
        let mut idx = Self::new(bounds, cell);
        for (i, e) in events.iter().enumerate() {
            idx.push(i, e.s);
        }
        idx
    }

    fn coord(&self, v: f64, axis: usize) -> usize {
        let c = ((v - self.origin[axis]) / self.cell).floor();
        (c.max(0.0) as usize).min(self.dims[axis] - 1)
    }

    /// Registers event `index` (must exceed every index pushed before).
    pub fn push(&mut self, index: usize, s: [f64; 2]) {
        let (i, j) = (self.coord(s[0], 0), self.coord(s[1], 1));
        self.buckets[i * self.dims[1] + j].push(index as u32);
    }

    fn cells_around(&self, s: [f64; 2], r: f64) -> impl Iterator<Item = usize> + '_ {
        let (i0, i1) = (self.coord(s[0] - r, 0), self.coord(s[0] + r, 0));
        let (j0, j1) = (self.coord(s[1] - r, 1), self.coord(s[1] + r, 1));
        let ny = self.dims[1];
        (i0..=i1).flat_map(move |i| (j0..=j1).map(move |j| i * ny + j))
    }

    /// Index of the most recent event before `before` within ℓ∞ distance `r` of `s`.
    pub fn last_within(&self, events: &[Event], before: usize, s: [f64; 2], r: f64) -> Option<usize> {
        let mut best: Option<usize> = None;
        for c in self.cells_around(s, r) {
            let b = &self.buckets[c];
            let end = b.partition_point(|&k| (k as usize) < before);
            for &k in b[..end].iter().rev() {
                let k = k as usize;
                if best.is_some_and(|bk| k <= bk) {
                    break;
                }
                if events[k].linf(s) <= r {
                    best = Some(k);
                    break;
                }
            }
        }
        best
    }

    /// Indices before `before`, within distance `r` of `s` and with `t ≥ t_min`, in increasing order.
    pub fn within(&self, events: &[Event], before: usize, s: [f64; 2], r: f64, t_min: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for c in self.cells_around(s, r) {
            let b = &self.buckets[c];
            let end = b.partition_point(|&k| (k as usize) < before);
            let start = b[..end].partition_point(|&k| events[k as usize].t < t_min);
            out.extend(
                b[start..end]
                    .iter()
                    .map(|&k| k as usize)
                    .filter(|&k| events[k].linf(s) <= r),
            );
        }
        out.sort_unstable();
        out
    }

    /// Up to `max` most recent indices before `before` within distance `r`, in increasing order.
    pub fn recent_within(&self, events: &[Event], before: usize, s: [f64; 2], r: f64, max: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for c in self.cells_around(s, r) {
            let b = &self.buckets[c];
            let end = b.partition_point(|&k| (k as usize) < before);
            out.extend(
                b[..end]
                    .iter()
                    .rev()
                    .map(|&k| k as usize)
                    .filter(|&k| events[k].linf(s) <= r)
                    .take(max),
            );
        }
        out.sort_unstable();
        let skip = out.len().saturating_sub(max);
        out.split_off(skip)
    }
}
