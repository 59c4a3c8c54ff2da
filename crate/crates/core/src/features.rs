//! Labeled dataset construction for the recursive (single-hop) and
//! long-distance prediction methods, with three feature sets: basic,
//! timetable-augmented and HA-augmented.
//!
//! Labels are measured departure-to-arrival: dwell at the origin stop is
//! excluded, dwell at intermediate stops is included. Only working-day
//! trips contribute. Samples whose required extra features cannot be
//! resolved (no scheduled run in range, for instance) are skipped and
//! counted rather than emitted with holes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{ProgressRecord, TripTrace};
use crate::models::{ha_predict, HaTable};
use crate::timetable::{nearest_departure, schedule_eta, Direction, Timetable};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature set requires {0} context which was not supplied")]
    MissingAux(&'static str),
    #[error("no pattern for line {line} direction {direction}")]
    UnknownPattern { line: String, direction: Direction },
    #[error("segment {seq} out of range for line {line} direction {direction}")]
    BadSegment {
        line: String,
        direction: Direction,
        seq: u32,
    },
    #[error("weather rows have inconsistent column counts")]
    WeatherDimMismatch,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{row}: {msg}")]
    BadRow { path: String, row: u64, msg: String },
}

/// Which features a model consumes.
///
/// `Timetable` extends `Basic` with the scheduled travel time and the delay
/// at the last stop; `HistAvg` replaces exactly those two extras with the
/// HA-estimated travel time.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSet {
    Basic,
    Timetable,
    HistAvg,
}

impl FeatureSet {
    pub fn parse(s: &str) -> Option<FeatureSet> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Some(FeatureSet::Basic),
            "timetable" => Some(FeatureSet::Timetable),
            "histavg" | "ha" => Some(FeatureSet::HistAvg),
            _ => None,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            FeatureSet::Basic => 8,
            FeatureSet::Timetable => 10,
            FeatureSet::HistAvg => 9,
        }
    }

    /// Flatten a vector into this set's layout. Returns the name of the
    /// first missing extra on mismatch.
    pub fn flatten(self, fv: &FeatureVector) -> Result<Vec<f64>, &'static str> {
        let mut row = vec![
            fv.next_stop_idx as f64,
            fv.tt_prev[0],
            fv.tt_prev[1],
            fv.tt_prev[2],
            fv.pct,
            fv.dest_stop_idx as f64,
            fv.time_of_day,
            fv.direction as f64,
        ];
        match self {
            FeatureSet::Basic => {}
            FeatureSet::Timetable => {
                row.push(fv.schedule_eta.ok_or("schedule_eta")?);
                row.push(fv.last_stop_delay.ok_or("last_stop_delay")?);
            }
            FeatureSet::HistAvg => {
                row.push(fv.ha_eta.ok_or("ha_eta")?);
            }
        }
        Ok(row)
    }
}

impl std::fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureSet::Basic => write!(f, "basic"),
            FeatureSet::Timetable => write!(f, "timetable"),
            FeatureSet::HistAvg => write!(f, "histavg"),
        }
    }
}

/// Model input for one prediction query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// 1-based index of the next stop to visit.
    pub next_stop_idx: u32,
    /// Travel times of the last three completed hops, most recent first;
    /// 0 is padding.
    pub tt_prev: [f64; 3],
    /// Percent of the current segment traveled, 0 at a stop.
    pub pct: f64,
    pub dest_stop_idx: u32,
    /// Seconds since local midnight.
    pub time_of_day: f64,
    /// 0 = direction A, 1 = direction B.
    pub direction: u8,
    pub schedule_eta: Option<f64>,
    /// Actual minus scheduled departure at the last stop.
    pub last_stop_delay: Option<f64>,
    pub ha_eta: Option<f64>,
    /// Buses currently on the segment ahead.
    pub congestion: Option<f64>,
    pub bus_lane: Option<f64>,
    pub lights: Option<f64>,
    /// Opaque precomputed columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weather: Vec<f64>,
}

impl FeatureVector {
    pub fn basic(
        next_stop_idx: u32,
        tt_prev: [f64; 3],
        pct: f64,
        dest_stop_idx: u32,
        time_of_day: f64,
        direction: Direction,
    ) -> Self {
        Self {
            next_stop_idx,
            tt_prev,
            pct,
            dest_stop_idx,
            time_of_day,
            direction: direction.as_feature() as u8,
            schedule_eta: None,
            last_stop_delay: None,
            ha_eta: None,
            congestion: None,
            bus_lane: None,
            lights: None,
            weather: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub line: String,
    pub date: NaiveDate,
    pub origin_idx: u32,
    pub dest_idx: u32,
    /// Departure time at the origin stop, seconds since midnight.
    pub depart_s: f64,
}

/// One labeled training/evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelSample {
    pub features: FeatureVector,
    /// Actual travel seconds from the origin departure to the destination
    /// arrival.
    pub label: f64,
    pub meta: SampleMeta,
}

/// Static per-segment attributes (`segments_aux.csv`):
/// `line,direction,seq,bus_lane,lights` with seq naming the segment's start
/// stop.
#[derive(Debug, Clone, Default)]
pub struct SegmentAuxTable {
    rows: BTreeMap<(String, Direction, u32), (bool, u32)>,
}

impl SegmentAuxTable {
    pub fn get(&self, line: &str, direction: Direction, seq: u32) -> Option<(bool, u32)> {
        self.rows.get(&(line.to_string(), direction, seq)).copied()
    }

    pub fn insert(&mut self, line: &str, direction: Direction, seq: u32, bus_lane: bool, lights: u32) {
        self.rows.insert((line.to_string(), direction, seq), (bus_lane, lights));
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let file = std::fs::File::open(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let mut table = Self::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| FeatureError::Csv {
                path: path.display().to_string(),
                source: e,
            })?;
            let row = i as u64 + 2;
            let bad = |msg: String| FeatureError::BadRow {
                path: path.display().to_string(),
                row,
                msg,
            };
            if rec.len() != 5 {
                return Err(bad("expected line,direction,seq,bus_lane,lights".into()));
            }
            let direction =
                Direction::parse(&rec[1]).ok_or_else(|| bad("bad direction".into()))?;
            let seq: u32 = rec[2].parse().map_err(|e| bad(format!("bad seq: {e}")))?;
            let bus_lane = matches!(&rec[3], "1" | "true");
            let lights: u32 = rec[4].parse().map_err(|e| bad(format!("bad lights: {e}")))?;
            table.insert(&rec[0], direction, seq, bus_lane, lights);
        }
        Ok(table)
    }
}

/// Per-date opaque weather columns (`weather.csv`: `date,w0,w1,...`).
#[derive(Debug, Clone, Default)]
pub struct WeatherTable {
    rows: BTreeMap<NaiveDate, Vec<f64>>,
}

impl WeatherTable {
    pub fn get(&self, date: NaiveDate) -> Option<&[f64]> {
        self.rows.get(&date).map(Vec::as_slice)
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let file = std::fs::File::open(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(file);
        let mut rows = BTreeMap::new();
        let mut width = None;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| FeatureError::Csv {
                path: path.display().to_string(),
                source: e,
            })?;
            let row = i as u64 + 2;
            let bad = |msg: String| FeatureError::BadRow {
                path: path.display().to_string(),
                row,
                msg,
            };
            let date: NaiveDate = rec[0].parse().map_err(|e| bad(format!("bad date: {e}")))?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("bad value: {e}")))?;
            if *width.get_or_insert(vals.len()) != vals.len() {
                return Err(FeatureError::WeatherDimMismatch);
            }
            rows.insert(date, vals);
        }
        Ok(Self { rows })
    }
}

/// Auxiliary inputs for dataset building. Feature sets requiring an absent
/// table fail fast with [`FeatureError::MissingAux`].
#[derive(Clone, Copy, Default)]
pub struct FeatureContext<'a> {
    pub timetable: Option<&'a Timetable>,
    pub ha: Option<&'a HaTable>,
    pub segment_aux: Option<&'a SegmentAuxTable>,
    pub congestion_records: Option<&'a [ProgressRecord]>,
    pub weather: Option<&'a WeatherTable>,
}

/// Built dataset plus counts of what was left out.
#[derive(Debug, Default)]
pub struct DatasetBuild {
    pub samples: Vec<TravelSample>,
    /// Samples dropped because a required extra feature could not be
    /// resolved (for example no scheduled run within the lookup window).
    pub skipped: usize,
    /// Trips ignored as weekend trips.
    pub weekend_trips: usize,
}

fn is_working_day(date: NaiveDate) -> bool {
    !matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Hop travel time ending at each event index (None when the previous
/// event is not the physically adjacent stop).
fn hop_times(trip: &TripTrace) -> Vec<Option<f64>> {
    let mut hops = vec![None; trip.events.len()];
    for i in 1..trip.events.len() {
        let (prev, cur) = (&trip.events[i - 1], &trip.events[i]);
        if cur.seq == prev.seq + 1 {
            let tt = cur.arrival_s - prev.departure_s;
            if tt > 0.0 {
                hops[i] = Some(tt);
            }
        }
    }
    hops
}

fn tt_prev_window(hops: &[Option<f64>], upto: usize) -> [f64; 3] {
    let mut window = [0.0; 3];
    let mut k = 0;
    for j in (1..=upto).rev() {
        if let Some(h) = hops[j] {
            window[k] = h;
            k += 1;
            if k == 3 {
                break;
            }
        }
    }
    window
}

struct ExtFill<'a> {
    set: FeatureSet,
    ctx: FeatureContext<'a>,
}

impl ExtFill<'_> {
    fn validate(set: FeatureSet, ctx: FeatureContext<'_>) -> Result<ExtFill<'_>, FeatureError> {
        match set {
            FeatureSet::Basic => {}
            FeatureSet::Timetable => {
                if ctx.timetable.is_none() {
                    return Err(FeatureError::MissingAux("timetable"));
                }
            }
            FeatureSet::HistAvg => {
                if ctx.ha.is_none() {
                    return Err(FeatureError::MissingAux("historical-average table"));
                }
            }
        }
        Ok(ExtFill { set, ctx })
    }

    /// Fill extras for a sample anchored at `origin_seq` departing
    /// `depart_s` toward `dest_seq`. Returns false when a required extra
    /// cannot be resolved (sample must be skipped).
    fn fill(
        &self,
        fv: &mut FeatureVector,
        trip: &TripTrace,
        origin_seq: u32,
        dest_seq: u32,
        depart_s: f64,
    ) -> bool {
        match self.set {
            FeatureSet::Basic => {}
            FeatureSet::Timetable => {
                let tt = self.ctx.timetable.expect("validated");
                let Ok(eta) = schedule_eta(
                    &tt.schedule,
                    &trip.line,
                    trip.direction,
                    origin_seq,
                    dest_seq,
                    depart_s,
                ) else {
                    return false;
                };
                let Some(sched_dep) =
                    nearest_departure(&tt.schedule, &trip.line, trip.direction, origin_seq, depart_s)
                else {
                    return false;
                };
                fv.schedule_eta = Some(eta);
                fv.last_stop_delay = Some(depart_s - sched_dep);
            }
            FeatureSet::HistAvg => {
                let table = self.ctx.ha.expect("validated");
                let fallback = self.ctx.timetable.map(|t| &t.schedule);
                let Ok(pred) = ha_predict(
                    table,
                    &trip.line,
                    trip.direction,
                    origin_seq,
                    dest_seq,
                    depart_s,
                    trip.date,
                    fallback,
                ) else {
                    return false;
                };
                fv.ha_eta = Some(pred.seconds);
            }
        }

        if let Some(aux) = self.ctx.segment_aux {
            if let Some((bus_lane, lights)) = aux.get(&trip.line, trip.direction, origin_seq) {
                fv.bus_lane = Some(if bus_lane { 1.0 } else { 0.0 });
                fv.lights = Some(lights as f64);
            }
        }
        if let Some(records) = self.ctx.congestion_records {
            if let Some(tt) = self.ctx.timetable {
                let at = trip.date.and_hms_opt(0, 0, 0).unwrap()
                    + chrono::Duration::seconds(depart_s as i64);
                if let Ok(count) =
                    congestion_count(records, tt, at, &trip.line, trip.direction, origin_seq)
                {
                    fv.congestion = Some(count as f64);
                }
            }
        }
        if let Some(weather) = self.ctx.weather {
            if let Some(vals) = weather.get(trip.date) {
                fv.weather = vals.to_vec();
            }
        }
        true
    }
}

fn sort_samples(samples: &mut [TravelSample]) {
    samples.sort_by(|a, b| {
        (&a.meta.line, a.meta.date)
            .cmp(&(&b.meta.line, b.meta.date))
            .then(a.meta.depart_s.total_cmp(&b.meta.depart_s))
            .then(a.meta.origin_idx.cmp(&b.meta.origin_idx))
            .then(a.meta.dest_idx.cmp(&b.meta.dest_idx))
            .then(a.label.total_cmp(&b.label))
    });
}

/// One sample per consecutive stop pair per trip; the destination is the
/// next stop and `tt_prev` is zero-padded at the trip start.
pub fn build_hop_dataset(
    trips: &[TripTrace],
    set: FeatureSet,
    ctx: FeatureContext<'_>,
) -> Result<DatasetBuild, FeatureError> {
    let filler = ExtFill::validate(set, ctx)?;
    let mut out = DatasetBuild::default();
    for trip in trips {
        if !is_working_day(trip.date) {
            out.weekend_trips += 1;
            continue;
        }
        let hops = hop_times(trip);
        for i in 0..trip.events.len().saturating_sub(1) {
            let (origin, dest) = (&trip.events[i], &trip.events[i + 1]);
            if dest.seq != origin.seq + 1 {
                continue;
            }
            let label = dest.arrival_s - origin.departure_s;
            if label <= 0.0 {
                continue;
            }
            let mut fv = FeatureVector::basic(
                dest.seq,
                tt_prev_window(&hops, i),
                0.0,
                dest.seq,
                origin.departure_s,
                trip.direction,
            );
            if !filler.fill(&mut fv, trip, origin.seq, dest.seq, origin.departure_s) {
                out.skipped += 1;
                continue;
            }
            out.samples.push(TravelSample {
                features: fv,
                label,
                meta: SampleMeta {
                    line: trip.line.clone(),
                    date: trip.date,
                    origin_idx: origin.seq,
                    dest_idx: dest.seq,
                    depart_s: origin.departure_s,
                },
            });
        }
    }
    sort_samples(&mut out.samples);
    Ok(out)
}

/// One sample per ordered (origin event, downstream stop) pair per trip.
pub fn build_longdist_dataset(
    trips: &[TripTrace],
    set: FeatureSet,
    ctx: FeatureContext<'_>,
) -> Result<DatasetBuild, FeatureError> {
    let filler = ExtFill::validate(set, ctx)?;
    let mut out = DatasetBuild::default();
    for trip in trips {
        if !is_working_day(trip.date) {
            out.weekend_trips += 1;
            continue;
        }
        let hops = hop_times(trip);
        for i in 0..trip.events.len() {
            let origin = &trip.events[i];
            for dest in &trip.events[i + 1..] {
                let label = dest.arrival_s - origin.departure_s;
                if label <= 0.0 {
                    continue;
                }
                let mut fv = FeatureVector::basic(
                    origin.seq + 1,
                    tt_prev_window(&hops, i),
                    0.0,
                    dest.seq,
                    origin.departure_s,
                    trip.direction,
                );
                if !filler.fill(&mut fv, trip, origin.seq, dest.seq, origin.departure_s) {
                    out.skipped += 1;
                    continue;
                }
                out.samples.push(TravelSample {
                    features: fv,
                    label,
                    meta: SampleMeta {
                        line: trip.line.clone(),
                        date: trip.date,
                        origin_idx: origin.seq,
                        dest_idx: dest.seq,
                        depart_s: origin.departure_s,
                    },
                });
            }
        }
    }
    sort_samples(&mut out.samples);
    Ok(out)
}

/// Number of distinct vehicles, of any line, whose current segment at the
/// latest ping not after `at` is the physical segment (same stop-id pair)
/// named by `(line, direction, seq)`.
pub fn congestion_count(
    records: &[ProgressRecord],
    timetable: &Timetable,
    at: NaiveDateTime,
    line: &str,
    direction: Direction,
    seq: u32,
) -> Result<usize, FeatureError> {
    let pattern = timetable
        .pattern(line, direction)
        .ok_or_else(|| FeatureError::UnknownPattern {
            line: line.to_string(),
            direction,
        })?;
    let (Some(from_id), Some(to_id)) = (pattern.stop_at(seq), pattern.stop_at(seq + 1)) else {
        return Err(FeatureError::BadSegment {
            line: line.to_string(),
            direction,
            seq,
        });
    };

    let mut latest: BTreeMap<(&str, &str), &ProgressRecord> = BTreeMap::new();
    for r in records {
        if r.timestamp > at {
            continue;
        }
        let key = (r.line.as_str(), r.vehicle_id.as_str());
        let newer = latest
            .get(&key)
            .map(|prev| r.timestamp > prev.timestamp)
            .unwrap_or(true);
        if newer {
            latest.insert(key, r);
        }
    }

    let mut count = 0;
    for r in latest.values() {
        // Terminal records (pct 100) have no current segment.
        if r.at_stop && r.pct >= 100.0 {
            continue;
        }
        let seg_start = r.next_stop_idx - 1;
        if seg_start == 0 {
            continue;
        }
        let Some(p) = timetable.pattern(&r.line, r.direction) else {
            continue;
        };
        let (Some(a), Some(b)) = (p.stop_at(seg_start), p.stop_at(seg_start + 1)) else {
            continue;
        };
        if a == from_id && b == to_id {
            count += 1;
        }
    }
    Ok(count)
}

pub const DATASET_CSV_HEADER: &str = "line,date,origin_idx,dest_idx,depart_s,next_stop_idx,\
tt_prev1,tt_prev2,tt_prev3,pct,dest_stop_idx,time_of_day,direction,schedule_eta,last_stop_delay,\
ha_eta,congestion,bus_lane,lights,label";

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write samples as CSV, one column per feature plus label and meta.
/// Weather columns are appended only when present (all rows must agree).
pub fn write_dataset_csv(path: &Path, samples: &[TravelSample]) -> Result<(), FeatureError> {
    let weather_dim = samples.first().map(|s| s.features.weather.len()).unwrap_or(0);
    if samples.iter().any(|s| s.features.weather.len() != weather_dim) {
        return Err(FeatureError::WeatherDimMismatch);
    }
    let io_err = |source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = String::from(DATASET_CSV_HEADER);
    for w in 0..weather_dim {
        buf.push_str(&format!(",weather_{w}"));
    }
    buf.push('\n');
    for s in samples {
        let f = &s.features;
        buf.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.meta.line,
            s.meta.date,
            s.meta.origin_idx,
            s.meta.dest_idx,
            s.meta.depart_s,
            f.next_stop_idx,
            f.tt_prev[0],
            f.tt_prev[1],
            f.tt_prev[2],
            f.pct,
            f.dest_stop_idx,
            f.time_of_day,
            f.direction,
            opt_str(f.schedule_eta),
            opt_str(f.last_stop_delay),
            opt_str(f.ha_eta),
            opt_str(f.congestion),
            opt_str(f.bus_lane),
            opt_str(f.lights),
            s.label
        ));
        for w in &f.weather {
            buf.push_str(&format!(",{w}"));
        }
        buf.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut fh| fh.write_all(buf.as_bytes()))
        .map_err(io_err)
}

pub fn read_dataset_csv(path: &Path) -> Result<Vec<TravelSample>, FeatureError> {
    let file = std::fs::File::open(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let expected: Vec<&str> = DATASET_CSV_HEADER.split(',').collect();
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FeatureError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let row = i as u64 + 2;
        let bad = |msg: String| FeatureError::BadRow {
            path: path.display().to_string(),
            row,
            msg,
        };
        if rec.len() < expected.len() {
            return Err(bad(format!(
                "expected at least {} columns, got {}",
                expected.len(),
                rec.len()
            )));
        }
        let req = |idx: usize, name: &str| -> Result<f64, FeatureError> {
            rec[idx]
                .parse()
                .map_err(|e| bad(format!("bad {name}: {e}")))
        };
        let opt = |idx: usize| -> Option<f64> {
            if rec[idx].is_empty() {
                None
            } else {
                rec[idx].parse().ok()
            }
        };
        let weather: Vec<f64> = (expected.len()..rec.len())
            .map(|w| req(w, "weather"))
            .collect::<Result<_, _>>()?;
        samples.push(TravelSample {
            features: FeatureVector {
                next_stop_idx: req(5, "next_stop_idx")? as u32,
                tt_prev: [req(6, "tt_prev1")?, req(7, "tt_prev2")?, req(8, "tt_prev3")?],
                pct: req(9, "pct")?,
                dest_stop_idx: req(10, "dest_stop_idx")? as u32,
                time_of_day: req(11, "time_of_day")?,
                direction: req(12, "direction")? as u8,
                schedule_eta: opt(13),
                last_stop_delay: opt(14),
                ha_eta: opt(15),
                congestion: opt(16),
                bus_lane: opt(17),
                lights: opt(18),
                weather,
            },
            label: req(19, "label")?,
            meta: SampleMeta {
                line: rec[0].to_string(),
                date: rec[1].parse().map_err(|e| bad(format!("bad date: {e}")))?,
                origin_idx: req(2, "origin_idx")? as u32,
                dest_idx: req(3, "dest_idx")? as u32,
                depart_s: req(4, "depart_s")?,
            },
        });
    }
    Ok(samples)
}
