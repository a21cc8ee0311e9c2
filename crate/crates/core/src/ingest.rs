//! CSV ingestion: ride records, hourly global series, station travel times,
//! and the native event format.
//!
//! Wall-clock stamps are read in one fixed UTC offset. The time origin is the
//! start of the study window, so every retained event lies in `(0, T]`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, TimeZone};
use serde::{Deserialize, Serialize};

use crate::covariates::StepFunction;
use crate::endostats::DistanceMatrix;
use crate::error::{RemError, Result};
use crate::event::{Dyad, Event, EventSequence, NodeId};

const NAIVE_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
];

/// Study window `(start, end]` in one fixed UTC offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyWindow {
    pub start: DateTime<FixedOffset>,
    pub end: DateTime<FixedOffset>,
}

impl StudyWindow {
    /// `start` and `end` are ISO-8601 stamps; those without an offset are read
    /// in `utc_offset` (e.g. `-04:00`).
    pub fn parse(start: &str, end: &str, utc_offset: &str) -> Result<Self> {
        let zone = parse_offset(utc_offset)?;
        let start = parse_instant(start, zone)
            .ok_or_else(|| RemError::Config(format!("cannot parse window start `{start}`")))?;
        let end =
            parse_instant(end, zone).ok_or_else(|| RemError::Config(format!("cannot parse window end `{end}`")))?;
        if end <= start {
            return Err(RemError::Config(format!("window end {end} is not after start {start}")));
        }
        Ok(Self { start, end })
    }

    pub fn zone(&self) -> FixedOffset {
        *self.start.offset()
    }

    pub fn length_seconds(&self) -> f64 {
        self.seconds_since_start(self.end)
    }

    pub fn seconds_since_start(&self, at: DateTime<FixedOffset>) -> f64 {
        let d = at.signed_duration_since(self.start);
        d.num_seconds() as f64 + d.subsec_nanos() as f64 * 1e-9
    }

    /// Local clock hour of the window start, in `[0, 24)`.
    pub fn origin_hour(&self) -> f64 {
        let local = self.start.naive_local();
        let midnight = local.date().and_hms_opt(0, 0, 0).expect("midnight exists");
        let d = local.signed_duration_since(midnight);
        (d.num_seconds() as f64 + d.subsec_nanos() as f64 * 1e-9) / 3600.0
    }

    pub fn time_of_day(&self, t: f64) -> f64 {
        derive_time_of_day(t, self.origin_hour())
    }

    pub fn parse_instant(&self, raw: &str) -> Option<DateTime<FixedOffset>> {
        parse_instant(raw, self.zone())
    }
}

pub fn parse_offset(raw: &str) -> Result<FixedOffset> {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("utc") || raw == "Z" {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    raw.parse::<FixedOffset>()
        .map_err(|e| RemError::Config(format!("bad UTC offset `{raw}`: {e}")))
}

/// ISO-8601 (with or without offset, `T` or space separated) or epoch seconds.
pub fn parse_instant(raw: &str, zone: FixedOffset) -> Option<DateTime<FixedOffset>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if let Ok(secs) = raw.parse::<f64>() {
        if !secs.is_finite() {
            return None;
        }
        let whole = secs.floor();
        let nanos = ((secs - whole) * 1e9).round().min(999_999_999.0) as u32;
        return DateTime::from_timestamp(whole as i64, nanos).map(|d| d.with_timezone(&zone));
    }
    if let Ok(d) = DateTime::parse_from_rfc3339(raw) {
        return Some(d);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%.f%z"] {
        if let Ok(d) = DateTime::parse_from_str(raw, fmt) {
            return Some(d);
        }
    }
    let naive = NAIVE_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })?;
    zone.from_local_datetime(&naive).single()
}

/// Fractional hours since local midnight, given the clock hour at `t = 0`.
pub fn derive_time_of_day(t: f64, origin_hour: f64) -> f64 {
    let h = (origin_hour + t / 3600.0).rem_euclid(24.0);
    if h >= 24.0 {
        0.0
    } else {
        h
    }
}

/// Station labels sorted lexicographically; the position is the node id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StationIndex {
    names: Vec<String>,
    ids: HashMap<String, NodeId>,
}

impl StationIndex {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        let names: Vec<String> = sorted.into_iter().collect();
        let ids = names.iter().enumerate().map(|(k, n)| (n.clone(), k as NodeId)).collect();
        Self { names, ids }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node_id", "station"])?;
        for (k, n) in self.names.iter().enumerate() {
            w.write_record([k.to_string(), n.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct EventReadOptions {
    pub window: StudyWindow,
    /// Abort when more than this fraction of data rows fail to parse.
    pub max_error_fraction: f64,
    /// Stations known from other inputs (e.g. the distance matrix).
    pub extra_stations: Vec<String>,
    pub drop_self_loops: bool,
}

impl EventReadOptions {
    pub fn new(window: StudyWindow) -> Self {
        Self {
            window,
            max_error_fraction: 0.01,
            extra_stations: Vec::new(),
            drop_self_loops: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestedEvents {
    pub sequence: EventSequence,
    pub stations: StationIndex,
    pub rows_read: usize,
    pub dropped_outside_window: usize,
    pub dropped_self_loops: usize,
    pub row_errors: Vec<RowError>,
}

impl IngestedEvents {
    pub fn ties_broken(&self) -> usize {
        self.sequence.ties_broken()
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| RemError::Ingest(format!("{}: missing column `{name}`", path.display())))
}

fn check_error_budget(path: &Path, errors: &[RowError], rows: usize, max_fraction: f64) -> Result<()> {
    if rows > 0 && errors.len() as f64 > max_fraction * rows as f64 {
        let shown: Vec<String> = errors.iter().take(5).map(|e| format!("line {}: {}", e.line, e.message)).collect();
        return Err(RemError::Ingest(format!(
            "{}: {} of {rows} rows failed ({})",
            path.display(),
            errors.len(),
            shown.join("; ")
        )));
    }
    Ok(())
}

/// Rides with `start_time`, `start_station`, `end_station`; other columns are
/// ignored. Rows stamped outside `(start, end]` are dropped and counted.
pub fn read_events(path: impl AsRef<Path>, options: &EventReadOptions) -> Result<IngestedEvents> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let c_time = column(&headers, "start_time", path)?;
    let c_from = column(&headers, "start_station", path)?;
    let c_to = column(&headers, "end_station", path)?;
    let horizon = options.window.length_seconds();

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut rows_read = 0;
    let mut outside = 0;
    let mut loops = 0;
    for record in reader.records() {
        rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(k).map(str::trim).unwrap_or("");
        let Some(at) = options.window.parse_instant(field(c_time)) else {
            errors.push(RowError { line, message: format!("unparseable start_time `{}`", field(c_time)) });
            continue;
        };
        let (from, to) = (field(c_from), field(c_to));
        if from.is_empty() || to.is_empty() {
            errors.push(RowError { line, message: "missing station".into() });
            continue;
        }
        let t = options.window.seconds_since_start(at);
        if !(t > 0.0 && t <= horizon) {
            outside += 1;
            continue;
        }
        if options.drop_self_loops && from == to {
            loops += 1;
            continue;
        }
        rows.push((t, from.to_string(), to.to_string()));
    }
    check_error_budget(path, &errors, rows_read, options.max_error_fraction)?;
    for e in &errors {
        log::warn!("{}:{}: {}", path.display(), e.line, e.message);
    }

    let stations = StationIndex::from_names(
        rows.iter()
            .flat_map(|(_, a, b)| [a.clone(), b.clone()])
            .chain(options.extra_stations.iter().cloned()),
    );
    let events = rows
        .iter()
        .map(|(t, a, b)| Event::new(*t, Dyad::new(stations.id(a).unwrap(), stations.id(b).unwrap())))
        .collect();
    let sequence = EventSequence::new(events, stations.len(), horizon)?;
    if sequence.ties_broken() > 0 {
        log::info!("{}: {} tied timestamps separated", path.display(), sequence.ties_broken());
    }
    Ok(IngestedEvents {
        sequence,
        stations,
        rows_read,
        dropped_outside_window: outside,
        dropped_self_loops: loops,
        row_errors: errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesTransform {
    #[default]
    Identity,
    Log1p,
}

impl SeriesTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Self::Identity => v,
            Self::Log1p => v.ln_1p(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SeriesOptions {
    pub window: StudyWindow,
    pub transform: SeriesTransform,
    /// Longest stretch, in seconds, over which the last value is carried.
    pub max_gap_seconds: f64,
}

/// Hourly (or finer) `timestamp`, `value` rows as a left-continuous step
/// function on the window timeline. Empty values count as missing and are
/// forward-filled up to `max_gap_seconds`.
pub fn read_global_series(path: impl AsRef<Path>, name: &str, options: &SeriesOptions) -> Result<StepFunction> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let c_time = column(&headers, "timestamp", path)?;
    let c_value = column(&headers, "value", path)?;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_time = record.get(c_time).unwrap_or("").trim();
        let at = options.window.parse_instant(raw_time).ok_or_else(|| {
            RemError::Ingest(format!("{}: line {line}: unparseable timestamp `{raw_time}`", path.display()))
        })?;
        let raw_value = record.get(c_value).unwrap_or("").trim();
        if raw_value.is_empty() || raw_value.eq_ignore_ascii_case("na") {
            continue;
        }
        let v: f64 = raw_value.parse().map_err(|_| {
            RemError::Ingest(format!("{}: line {line}: unparseable value `{raw_value}`", path.display()))
        })?;
        let v = options.transform.apply(v);
        if !v.is_finite() {
            return Err(RemError::Ingest(format!(
                "{}: line {line}: `{name}` value {raw_value} is invalid after transform",
                path.display()
            )));
        }
        points.push((options.window.seconds_since_start(at), v));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|later, earlier| later.0 == earlier.0);

    let horizon = options.window.length_seconds();
    // Keep the last stamp at or before the origin and everything inside.
    let first = points.partition_point(|p| p.0 <= 0.0).saturating_sub(1);
    let end = points.partition_point(|p| p.0 < horizon);
    let kept = &points[first..end.max(first)];
    if kept.is_empty() {
        return Err(RemError::Ingest(format!(
            "{}: series `{name}` has no values inside the study window",
            path.display()
        )));
    }
    let describe = |s: f64| {
        let at = options.window.start + chrono::Duration::milliseconds((s * 1e3).round() as i64);
        at.to_rfc3339()
    };
    if kept[0].0 > 0.0 && kept[0].0 > options.max_gap_seconds {
        return Err(RemError::Ingest(format!(
            "{}: series `{name}` has no value from {} to {}",
            path.display(),
            describe(0.0),
            describe(kept[0].0)
        )));
    }
    let mut bounds: Vec<f64> = kept.iter().map(|p| p.0.max(0.0)).collect();
    bounds.push(horizon);
    for w in bounds.windows(2) {
        if w[1] - w[0] > options.max_gap_seconds {
            return Err(RemError::Ingest(format!(
                "{}: series `{name}` has a gap from {} to {} beyond the fill limit",
                path.display(),
                describe(w[0]),
                describe(w[1])
            )));
        }
    }
    StepFunction::new(kept.iter().map(|p| p.0).collect(), kept.iter().map(|p| p.1).collect())
}

/// Station labels appearing in a distance matrix file.
pub fn read_distance_stations(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let c_from = column(&headers, "station_id_from", path)?;
    let c_to = column(&headers, "station_id_to", path)?;
    let mut names = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        for c in [c_from, c_to] {
            let s = record.get(c).unwrap_or("").trim();
            if !s.is_empty() {
                names.insert(s.to_string());
            }
        }
    }
    Ok(names.into_iter().collect())
}

/// `station_id_from`, `station_id_to`, `minutes`. Pairs that are absent stay
/// infinite; stations missing from `stations` are skipped.
pub fn read_distance_matrix(path: impl AsRef<Path>, stations: &StationIndex) -> Result<DistanceMatrix> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let c_from = column(&headers, "station_id_from", path)?;
    let c_to = column(&headers, "station_id_to", path)?;
    let c_min = column(&headers, "minutes", path)?;
    let mut m = DistanceMatrix::new(stations.len());
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let (Some(a), Some(b)) = (
            stations.id(record.get(c_from).unwrap_or("").trim()),
            stations.id(record.get(c_to).unwrap_or("").trim()),
        ) else {
            continue;
        };
        let raw = record.get(c_min).unwrap_or("").trim();
        let minutes: f64 = raw
            .parse()
            .map_err(|_| RemError::Ingest(format!("{}: line {line}: bad minutes `{raw}`", path.display())))?;
        if !(minutes >= 0.0 && minutes.is_finite()) {
            return Err(RemError::Ingest(format!("{}: line {line}: minutes must be finite and >= 0", path.display())));
        }
        m.set(a, b, minutes);
    }
    Ok(m)
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    time: f64,
    sender: NodeId,
    receiver: NodeId,
}

/// Native event format: `time,sender,receiver` with shortest round-trip floats.
pub fn write_events_csv(seq: &EventSequence, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in seq.events() {
        w.serialize(EventRow {
            time: e.time,
            sender: e.dyad.sender,
            receiver: e.dyad.receiver,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the native format. Without explicit values the node count is one past
/// the largest id and the horizon is the last event time.
pub fn read_events_csv(
    path: impl AsRef<Path>,
    node_count: Option<usize>,
    horizon: Option<f64>,
) -> Result<EventSequence> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut events = Vec::new();
    for row in reader.deserialize() {
        let row: EventRow = row?;
        events.push(Event::new(row.time, Dyad::new(row.sender, row.receiver)));
    }
    let nodes = node_count.unwrap_or_else(|| {
        events
            .iter()
            .map(|e| e.dyad.sender.max(e.dyad.receiver) as usize + 1)
            .max()
            .unwrap_or(1)
    });
    let horizon = horizon.unwrap_or_else(|| events.iter().map(|e| e.time).fold(0.0, f64::max));
    EventSequence::new(events, nodes, horizon)
}
