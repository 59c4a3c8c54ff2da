//! Map-matching of raw pings onto route patterns: direction resolution,
//! progress records (next stop, at-stop flag, percent of segment traveled)
//! and per-trip stop-event tables.
//!
//! Thresholds (at-stop radius, off-route distance, trip-split gap, outlier
//! run length) are config knobs; the defaults are generous for a 30 s ping
//! cadence.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoPoint};
use crate::ingest::RawPing;
use crate::timetable::{Direction, RoutePattern, Timetable};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("too few pings to resolve direction ({0} usable)")]
    TooFewPings(usize),
    #[error("direction ambiguous for line {0} (equal forward scores)")]
    Ambiguous(String),
    #[error("no pattern for line {line} direction {direction}")]
    MissingPattern { line: String, direction: Direction },
    #[error("vehicle off route: {run} consecutive pings > {threshold} m from every segment (first at index {first_index})")]
    OffRoute {
        first_index: usize,
        run: usize,
        threshold: f64,
    },
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

/// Matching thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchConfig {
    /// A ping within this distance of a stop counts as at-stop.
    pub at_stop_radius_m: f64,
    /// Pings further than this from every segment are glitches.
    pub off_route_m: f64,
    /// Ping gaps longer than this split a trip.
    pub trip_gap_s: f64,
    /// More than this many consecutive off-route pings ends the trip.
    pub max_consecutive_outliers: usize,
    /// Pings implying a sustained along-route speed above this are glitches.
    pub max_speed_mps: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            at_stop_radius_m: 50.0,
            off_route_m: 500.0,
            trip_gap_s: 900.0,
            max_consecutive_outliers: 3,
            max_speed_mps: 12.0,
        }
    }
}

/// One ping resolved onto a route (the preprocessed-record shape).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub line: String,
    pub timestamp: NaiveDateTime,
    pub vehicle_id: String,
    pub brigade: String,
    pub direction: Direction,
    /// 1-based index of the next stop to visit, in [1, n].
    pub next_stop_idx: u32,
    pub at_stop: bool,
    /// Percent of the current inter-stop segment traveled, in [0, 100].
    pub pct: f64,
}

impl ProgressRecord {
    /// Continuous route coordinate in percent units: stop seq s sits at
    /// (s-1)*100.
    pub fn route_pos(&self) -> f64 {
        if self.at_stop && self.pct >= 100.0 {
            // Terminal stop: next_stop_idx == n, pct == 100.
            (self.next_stop_idx as f64 - 1.0) * 100.0
        } else {
            (self.next_stop_idx as f64 - 2.0) * 100.0 + self.pct
        }
    }

    /// Stop seq this record is anchored at, when at_stop.
    pub fn anchored_stop(&self) -> Option<u32> {
        if !self.at_stop {
            return None;
        }
        if self.pct >= 100.0 {
            Some(self.next_stop_idx)
        } else {
            Some(self.next_stop_idx - 1)
        }
    }

    pub fn seconds_of_day(&self) -> f64 {
        self.timestamp.num_seconds_from_midnight() as f64
    }
}

/// Arrival/departure at one stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    /// 1-based stop seq.
    pub seq: u32,
    /// Seconds since the trip date's local midnight.
    pub arrival_s: f64,
    pub departure_s: f64,
}

/// Ordered stop events of one vehicle trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripTrace {
    pub line: String,
    pub direction: Direction,
    pub vehicle_id: String,
    pub brigade: String,
    pub date: NaiveDate,
    pub events: Vec<StopEvent>,
}

impl TripTrace {
    /// Travel seconds from departure at the i-th event to arrival at the
    /// j-th event (indices into `events`).
    pub fn travel_time(&self, i: usize, j: usize) -> f64 {
        self.events[j].arrival_s - self.events[i].departure_s
    }
}

fn nearest_stop(p: GeoPoint, positions: &[GeoPoint]) -> (usize, f64) {
    let mut best = (0usize, f64::MAX);
    for (i, &s) in positions.iter().enumerate() {
        let d = geo::haversine(p, s);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Resolve travel direction by counting forward transitions of the
/// nearest-stop sequence against each direction's pattern.
///
/// Needs at least 5 pings spanning at least 2 distinct nearest stops.
pub fn match_direction(
    pings: &[RawPing],
    timetable: &Timetable,
    line: &str,
) -> Result<Direction, MatchError> {
    if pings.len() < 5 {
        return Err(MatchError::TooFewPings(pings.len()));
    }
    let mut scores = BTreeMap::new();
    let mut max_distinct = 0usize;
    for direction in [Direction::A, Direction::B] {
        let pattern = timetable
            .pattern(line, direction)
            .ok_or_else(|| MatchError::MissingPattern {
                line: line.to_string(),
                direction,
            })?;
        let positions = timetable.pattern_positions(pattern);
        let seq: Vec<usize> = pings
            .iter()
            .map(|p| nearest_stop(p.position, &positions).0)
            .collect();
        let mut distinct: Vec<usize> = seq.clone();
        distinct.sort_unstable();
        distinct.dedup();
        max_distinct = max_distinct.max(distinct.len());
        let forward = seq.windows(2).filter(|w| w[1] > w[0]).count();
        scores.insert(direction, forward);
    }
    if max_distinct < 2 {
        return Err(MatchError::TooFewPings(pings.len()));
    }
    let a = scores[&Direction::A];
    let b = scores[&Direction::B];
    match a.cmp(&b) {
        std::cmp::Ordering::Greater => Ok(Direction::A),
        std::cmp::Ordering::Less => Ok(Direction::B),
        std::cmp::Ordering::Equal => Err(MatchError::Ambiguous(line.to_string())),
    }
}

/// Match one vehicle's pings (direction already resolved) onto the pattern.
///
/// Output preserves ping order; glitch pings (further than the off-route
/// threshold from every segment, or mapping backward along the route) are
/// dropped, so the output may be shorter than the input. More than
/// `max_consecutive_outliers` consecutive off-route pings aborts with
/// [`MatchError::OffRoute`]; the caller may split the trip there and retry.
pub fn to_progress(
    pings: &[RawPing],
    pattern: &RoutePattern,
    timetable: &Timetable,
    config: &MatchConfig,
) -> Result<Vec<ProgressRecord>, MatchError> {
    let positions = timetable.pattern_positions(pattern);
    let n = positions.len();
    assert!(n >= 2, "pattern must have at least 2 stops");
    let seg_len: Vec<f64> = (1..n)
        .map(|s| geo::haversine(positions[s - 1], positions[s]))
        .collect();
    let mut cum_m = vec![0.0f64; n];
    for s in 1..n {
        cum_m[s] = cum_m[s - 1] + seg_len[s - 1];
    }

    // A ping resolved onto the pattern: 1-based segment plus record fields.
    struct Candidate {
        seg: usize,
        next_stop_idx: u32,
        at_stop: bool,
        pct: f64,
        meters: f64,
    }

    let resolve = |p: GeoPoint, search_from: usize| -> (f64, Option<Candidate>) {
        let mut best_any = f64::MAX;
        let mut best_fwd: Option<(usize, f64)> = None;
        for s in 1..n {
            let d = geo::distance_to_segment(p, positions[s - 1], positions[s])
                .expect("pattern stops validated non-degenerate");
            best_any = best_any.min(d);
            if s >= search_from && best_fwd.map(|(_, bd)| d < bd).unwrap_or(true) {
                best_fwd = Some((s, d));
            }
        }
        let cand = best_fwd.and_then(|(s, d)| {
            if d > config.off_route_m {
                return None;
            }
            let d_start = geo::haversine(p, positions[s - 1]);
            let d_end = geo::haversine(p, positions[s]);
            Some(if d_start.min(d_end) <= config.at_stop_radius_m {
                let stop_seq = if d_start <= d_end { s } else { s + 1 };
                if stop_seq == n {
                    Candidate {
                        seg: n - 1,
                        next_stop_idx: n as u32,
                        at_stop: true,
                        pct: 100.0,
                        meters: cum_m[n - 1],
                    }
                } else {
                    Candidate {
                        seg: stop_seq,
                        next_stop_idx: stop_seq as u32 + 1,
                        at_stop: true,
                        pct: 0.0,
                        meters: cum_m[stop_seq - 1],
                    }
                }
            } else {
                let t = geo::segment_progress(p, positions[s - 1], positions[s])
                    .expect("pattern stops validated non-degenerate");
                Candidate {
                    seg: s,
                    next_stop_idx: s as u32 + 1,
                    at_stop: false,
                    pct: 100.0 * t,
                    meters: cum_m[s - 1] + t * seg_len[s - 1],
                }
            })
        });
        (best_any, cand)
    };

    let mut records = Vec::with_capacity(pings.len());
    // Current 1-based segment index: bus is between stops cur_seg and cur_seg+1.
    let mut cur_seg: usize = 1;
    let mut initialized = false;
    let mut outlier_run = 0usize;
    let mut outlier_first = 0usize;
    // Consecutive on-route pings dropped as backward or over-speed glitches;
    // too many in a row trigger position re-acquisition.
    let mut glitch_drops = 0usize;
    let mut last_kept: Option<(f64, NaiveDateTime)> = None;

    for (idx, ping) in pings.iter().enumerate() {
        let search_from = if initialized { cur_seg } else { 1 };
        let (best_any, mut cand) = resolve(ping.position, search_from);

        if best_any > config.off_route_m {
            if outlier_run == 0 {
                outlier_first = idx;
            }
            outlier_run += 1;
            if outlier_run > config.max_consecutive_outliers {
                return Err(MatchError::OffRoute {
                    first_index: outlier_first,
                    run: outlier_run,
                    threshold: config.off_route_m,
                });
            }
            continue;
        }
        outlier_run = 0;

        // Glitch screens: backward jumps and implausible along-route speed.
        let mut glitch = cand.is_none();
        if let (Some(c), Some((m0, t0))) = (&cand, &last_kept) {
            let dt = ((ping.timestamp - *t0).num_seconds() as f64).max(1.0);
            if c.meters - m0 > config.max_speed_mps * dt + config.at_stop_radius_m {
                glitch = true;
            }
        }
        if glitch {
            glitch_drops += 1;
            if glitch_drops <= config.max_consecutive_outliers {
                continue;
            }
            // Sustained disagreement with the tracked position: re-acquire.
            let (_, fresh) = resolve(ping.position, 1);
            cand = fresh;
            last_kept = None;
        }
        glitch_drops = 0;
        let Some(c) = cand else { continue };

        cur_seg = c.seg;
        initialized = true;
        last_kept = Some((c.meters, ping.timestamp));
        records.push(ProgressRecord {
            line: ping.line.clone(),
            timestamp: ping.timestamp,
            vehicle_id: ping.vehicle_id.clone(),
            brigade: ping.brigade.clone(),
            direction: pattern.direction,
            next_stop_idx: c.next_stop_idx,
            at_stop: c.at_stop,
            pct: c.pct,
        });
    }
    Ok(records)
}

fn seconds_since(date: NaiveDate, ts: NaiveDateTime) -> f64 {
    (ts - date.and_hms_opt(0, 0, 0).unwrap()).num_seconds() as f64
}

/// Build trip traces from time-sorted progress records of one vehicle-day.
///
/// Arrival at a stop is the first at-stop record for it, or the linearly
/// interpolated crossing of the stop's route position when no at-stop ping
/// exists. Departure is the last at-stop record (or equals arrival). Trips
/// split on direction change or on ping gaps longer than `trip_gap_s`.
pub fn to_trips(records: &[ProgressRecord], config: &MatchConfig) -> Vec<TripTrace> {
    let mut trips = Vec::new();
    if records.is_empty() {
        return trips;
    }
    let mut chunk_start = 0usize;
    for i in 1..=records.len() {
        let boundary = i == records.len()
            || records[i].direction != records[i - 1].direction
            || records[i].line != records[i - 1].line
            || records[i].vehicle_id != records[i - 1].vehicle_id
            || (records[i].timestamp - records[i - 1].timestamp).num_seconds() as f64
                > config.trip_gap_s;
        if boundary {
            if let Some(trip) = chunk_to_trip(&records[chunk_start..i]) {
                trips.push(trip);
            }
            chunk_start = i;
        }
    }
    trips
}

fn chunk_to_trip(records: &[ProgressRecord]) -> Option<TripTrace> {
    if records.len() < 2 {
        return None;
    }
    let date = records[0].timestamp.date();
    let times: Vec<f64> = records.iter().map(|r| seconds_since(date, r.timestamp)).collect();
    let route_pos: Vec<f64> = records.iter().map(ProgressRecord::route_pos).collect();

    // At-stop anchors: stop seq -> (first time, last time).
    let mut anchors: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for (r, &t) in records.iter().zip(&times) {
        if let Some(seq) = r.anchored_stop() {
            anchors
                .entry(seq)
                .and_modify(|(_, last)| *last = t)
                .or_insert((t, t));
        }
    }

    let lo = route_pos.iter().cloned().fold(f64::MAX, f64::min);
    let hi = route_pos.iter().cloned().fold(f64::MIN, f64::max);
    let first_stop = (lo / 100.0).ceil() as u32 + 1; // seq with route pos >= lo
    let last_stop = (hi / 100.0).floor() as u32 + 1;

    let mut events = Vec::new();
    for seq in first_stop..=last_stop.max(first_stop) {
        let target = (seq as f64 - 1.0) * 100.0;
        let (arrival, departure) = if let Some(&(first, last)) = anchors.get(&seq) {
            (first, last)
        } else {
            // First upward crossing of the stop's route position.
            let mut crossing = None;
            for w in 1..records.len() {
                let (p0, p1) = (route_pos[w - 1], route_pos[w]);
                if p0 < target && p1 >= target {
                    let frac = (target - p0) / (p1 - p0);
                    crossing = Some(times[w - 1] + (times[w] - times[w - 1]) * frac);
                    break;
                }
            }
            match crossing {
                Some(t) => (t, t),
                None => continue,
            }
        };
        events.push(StopEvent {
            seq,
            arrival_s: arrival,
            departure_s: departure.max(arrival),
        });
    }

    // Enforce strictly increasing event times; offending events are dropped.
    let mut filtered: Vec<StopEvent> = Vec::with_capacity(events.len());
    for e in events {
        match filtered.last() {
            Some(prev) if e.arrival_s <= prev.departure_s => continue,
            _ => filtered.push(e),
        }
    }
    if filtered.len() < 2 {
        return None;
    }
    Some(TripTrace {
        line: records[0].line.clone(),
        direction: records[0].direction,
        vehicle_id: records[0].vehicle_id.clone(),
        brigade: records[0].brigade.clone(),
        date,
        events: filtered,
    })
}

/// Full preprocessing over a mixed ping set: group by (line, vehicle, date),
/// split on gaps, resolve direction per chunk (with one turnaround split
/// retry on ambiguity), match, and assemble trips.
#[derive(Debug, Default)]
pub struct PipelineOutput {
    pub records: Vec<ProgressRecord>,
    pub trips: Vec<TripTrace>,
    /// Pings in chunks whose direction could not be resolved.
    pub unresolved_pings: usize,
    /// Chunks abandoned as off-route.
    pub off_route_chunks: usize,
}

pub fn process_pings(
    pings: &[RawPing],
    timetable: &Timetable,
    config: &MatchConfig,
) -> PipelineOutput {
    let mut by_key: BTreeMap<(String, String, NaiveDate), Vec<&RawPing>> = BTreeMap::new();
    for p in pings {
        by_key
            .entry((p.line.clone(), p.vehicle_id.clone(), p.timestamp.date()))
            .or_default()
            .push(p);
    }

    let mut out = PipelineOutput::default();
    for ((line, _vehicle, _date), mut group) in by_key {
        group.sort_by_key(|p| p.timestamp);
        let mut chunks: Vec<Vec<RawPing>> = Vec::new();
        let mut cur: Vec<RawPing> = Vec::new();
        for p in group {
            if let Some(last) = cur.last() {
                if (p.timestamp - last.timestamp).num_seconds() as f64 > config.trip_gap_s {
                    chunks.push(std::mem::take(&mut cur));
                }
            }
            cur.push(p.clone());
        }
        if !cur.is_empty() {
            chunks.push(cur);
        }
        for chunk in chunks {
            process_chunk(&chunk, &line, timetable, config, &mut out, 0);
        }
    }
    out.records.sort_by(|a, b| {
        (&a.line, &a.vehicle_id, a.timestamp).cmp(&(&b.line, &b.vehicle_id, b.timestamp))
    });
    for chunk_records in split_records_by_vehicle(&out.records) {
        out.trips.extend(to_trips(&chunk_records, config));
    }
    out.trips.sort_by(|a, b| {
        let ka = (&a.line, a.date, &a.vehicle_id, a.events[0].arrival_s as i64);
        let kb = (&b.line, b.date, &b.vehicle_id, b.events[0].arrival_s as i64);
        ka.cmp(&kb)
    });
    out
}

fn split_records_by_vehicle(records: &[ProgressRecord]) -> Vec<Vec<ProgressRecord>> {
    let mut groups: BTreeMap<(String, String, NaiveDate), Vec<ProgressRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.line.clone(), r.vehicle_id.clone(), r.timestamp.date()))
            .or_default()
            .push(r.clone());
    }
    groups.into_values().collect()
}

fn process_chunk(
    chunk: &[RawPing],
    line: &str,
    timetable: &Timetable,
    config: &MatchConfig,
    out: &mut PipelineOutput,
    depth: usize,
) {
    match match_direction(chunk, timetable, line) {
        Ok(direction) => {
            let Some(pattern) = timetable.pattern(line, direction) else {
                out.unresolved_pings += chunk.len();
                return;
            };
            match to_progress(chunk, pattern, timetable, config) {
                Ok(records) => out.records.extend(records),
                Err(MatchError::OffRoute { first_index, .. }) if depth < 4 => {
                    // Salvage the on-route prefix, skip the outliers, retry the rest.
                    let prefix = &chunk[..first_index];
                    if prefix.len() >= 5 {
                        process_chunk(prefix, line, timetable, config, out, depth + 1);
                    }
                    let rest_start = first_index + config.max_consecutive_outliers + 1;
                    if chunk.len() > rest_start + 5 {
                        process_chunk(&chunk[rest_start..], line, timetable, config, out, depth + 1);
                    }
                }
                Err(_) => out.off_route_chunks += 1,
            }
        }
        Err(MatchError::Ambiguous(_)) if depth < 4 && chunk.len() >= 10 => {
            // Likely a turnaround inside the chunk: split at the route
            // extremum of the direction-A nearest-stop sequence.
            if let Some(pattern) = timetable.pattern(line, Direction::A) {
                let positions = timetable.pattern_positions(pattern);
                let seq: Vec<usize> = chunk
                    .iter()
                    .map(|p| nearest_stop(p.position, &positions).0)
                    .collect();
                let mut arg_max = 0usize;
                let mut arg_min = 0usize;
                for (i, &s) in seq.iter().enumerate() {
                    if s > seq[arg_max] {
                        arg_max = i;
                    }
                    if s < seq[arg_min] {
                        arg_min = i;
                    }
                }
                // Split at the extremum farther from the chunk edges.
                let interior = |i: usize| i.min(seq.len() - 1 - i);
                let arg_ext = if interior(arg_max) >= interior(arg_min) {
                    arg_max
                } else {
                    arg_min
                };
                if arg_ext > 2 && arg_ext + 2 < seq.len() {
                    process_chunk(&chunk[..arg_ext], line, timetable, config, out, depth + 1);
                    process_chunk(&chunk[arg_ext..], line, timetable, config, out, depth + 1);
                    return;
                }
            }
            out.unresolved_pings += chunk.len();
        }
        Err(_) => out.unresolved_pings += chunk.len(),
    }
}

pub const PROGRESS_CSV_HEADER: &str =
    "line,timestamp,vehicle_id,brigade,direction,next_stop_idx,at_stop,pct";
pub const TRIPS_CSV_HEADER: &str =
    "line,direction,vehicle_id,brigade,date,seq,arrival_s,departure_s";

/// Write progress records in the preprocessed-data CSV shape.
pub fn write_progress_csv(path: &Path, records: &[ProgressRecord]) -> Result<(), MatchError> {
    let io_err = |source| MatchError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    let mut buf = String::from(PROGRESS_CSV_HEADER);
    buf.push('\n');
    for r in records {
        buf.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            r.line,
            r.timestamp.format("%Y-%m-%d %H:%M:%S"),
            r.vehicle_id,
            r.brigade,
            r.direction,
            r.next_stop_idx,
            r.at_stop,
            r.pct
        ));
    }
    f.write_all(buf.as_bytes()).map_err(io_err)
}

pub fn read_progress_csv(path: &Path) -> Result<Vec<ProgressRecord>, MatchError> {
    let file = std::fs::File::open(path).map_err(|source| MatchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| MatchError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let row = i as u64 + 2;
        let bad = |msg: String| MatchError::BadRow {
            path: path.display().to_string(),
            row,
            msg,
        };
        if rec.len() != 8 {
            return Err(bad("expected 8 columns".into()));
        }
        records.push(ProgressRecord {
            line: rec[0].to_string(),
            timestamp: NaiveDateTime::parse_from_str(&rec[1], "%Y-%m-%d %H:%M:%S")
                .map_err(|e| bad(format!("bad timestamp: {e}")))?,
            vehicle_id: rec[2].to_string(),
            brigade: rec[3].to_string(),
            direction: Direction::parse(&rec[4]).ok_or_else(|| bad("bad direction".into()))?,
            next_stop_idx: rec[5].parse().map_err(|e| bad(format!("bad next_stop_idx: {e}")))?,
            at_stop: rec[6].parse().map_err(|e| bad(format!("bad at_stop: {e}")))?,
            pct: rec[7].parse().map_err(|e| bad(format!("bad pct: {e}")))?,
        });
    }
    Ok(records)
}

/// Write trip traces as one row per stop event.
pub fn write_trips_csv(path: &Path, trips: &[TripTrace]) -> Result<(), MatchError> {
    let io_err = |source| MatchError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    let mut buf = String::from(TRIPS_CSV_HEADER);
    buf.push('\n');
    for t in trips {
        for e in &t.events {
            buf.push_str(&format!(
                "{},{},{},{},{},{},{:.3},{:.3}\n",
                t.line, t.direction, t.vehicle_id, t.brigade, t.date, e.seq, e.arrival_s, e.departure_s
            ));
        }
    }
    f.write_all(buf.as_bytes()).map_err(io_err)
}

pub fn read_trips_csv(path: &Path) -> Result<Vec<TripTrace>, MatchError> {
    let file = std::fs::File::open(path).map_err(|source| MatchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut trips: Vec<TripTrace> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| MatchError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let row = i as u64 + 2;
        let bad = |msg: String| MatchError::BadRow {
            path: path.display().to_string(),
            row,
            msg,
        };
        if rec.len() != 8 {
            return Err(bad("expected 8 columns".into()));
        }
        let line = rec[0].to_string();
        let direction = Direction::parse(&rec[1]).ok_or_else(|| bad("bad direction".into()))?;
        let vehicle_id = rec[2].to_string();
        let brigade = rec[3].to_string();
        let date: NaiveDate = rec[4].parse().map_err(|e| bad(format!("bad date: {e}")))?;
        let event = StopEvent {
            seq: rec[5].parse().map_err(|e| bad(format!("bad seq: {e}")))?,
            arrival_s: rec[6].parse().map_err(|e| bad(format!("bad arrival_s: {e}")))?,
            departure_s: rec[7].parse().map_err(|e| bad(format!("bad departure_s: {e}")))?,
        };
        // Consecutive rows with the same identity and increasing seq extend
        // the current trip; anything else starts a new one.
        let extend = trips.last().map(|t: &TripTrace| {
            t.line == line
                && t.direction == direction
                && t.vehicle_id == vehicle_id
                && t.brigade == brigade
                && t.date == date
                && t.events.last().map(|e| e.seq < event.seq).unwrap_or(true)
        });
        if extend == Some(true) {
            trips.last_mut().unwrap().events.push(event);
        } else {
            trips.push(TripTrace {
                line,
                direction,
                vehicle_id,
                brigade,
                date,
                events: vec![event],
            });
        }
    }
    Ok(trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::point_along;
    use crate::timetable::{Schedule, StopDef};

    fn test_timetable(n: usize) -> Timetable {
        // Straight north-south line, ~700 m between stops.
        let mut stops = BTreeMap::new();
        let mut ids = Vec::new();
        for i in 0..n {
            let id = format!("S{}", i + 1);
            stops.insert(
                id.clone(),
                StopDef {
                    stop_id: id.clone(),
                    position: GeoPoint {
                        lat: 52.20 + 0.0063 * i as f64,
                        lon: 21.00,
                    },
                },
            );
            ids.push(id);
        }
        let mut patterns = BTreeMap::new();
        patterns.insert(
            ("T".to_string(), Direction::A),
            RoutePattern {
                line: "T".into(),
                direction: Direction::A,
                stops: ids.clone(),
            },
        );
        let mut rev = ids.clone();
        rev.reverse();
        patterns.insert(
            ("T".to_string(), Direction::B),
            RoutePattern {
                line: "T".into(),
                direction: Direction::B,
                stops: rev,
            },
        );
        Timetable {
            stops,
            patterns,
            schedule: Schedule::default(),
        }
    }

    fn ping(tt: &Timetable, t_s: i64, lat: f64, lon: f64) -> RawPing {
        let _ = tt;
        RawPing {
            line: "T".into(),
            vehicle_id: "V1".into(),
            brigade: "1".into(),
            timestamp: NaiveDate::from_ymd_opt(2021, 3, 11)
                .unwrap()
                .and_hms_opt(10, 0, 0)
                .unwrap()
                + chrono::Duration::seconds(t_s),
            position: GeoPoint { lat, lon },
        }
    }

    fn sweep(tt: &Timetable, from_stop: usize, to_stop: usize, step_s: i64) -> Vec<RawPing> {
        // Constant-speed run between two stops of the A pattern.
        let pat = tt.pattern("T", Direction::A).unwrap();
        let pos = tt.pattern_positions(pat);
        let a = pos[from_stop - 1];
        let b = pos[to_stop - 1];
        let steps = 20;
        (0..=steps)
            .map(|i| {
                let t = i as f64 / steps as f64;
                let p = point_along(a, b, t);
                ping(tt, i * step_s, p.lat, p.lon)
            })
            .collect()
    }

    #[test]
    fn direction_forward_and_reverse() {
        let tt = test_timetable(5);
        let fwd = sweep(&tt, 1, 5, 30);
        assert_eq!(match_direction(&fwd, &tt, "T").unwrap(), Direction::A);
        let mut rev = fwd;
        rev.reverse();
        for (i, p) in rev.iter_mut().enumerate() {
            p.timestamp = ping(&tt, 30 * i as i64, 0.0, 0.0).timestamp;
        }
        assert_eq!(match_direction(&rev, &tt, "T").unwrap(), Direction::B);
    }

    #[test]
    fn direction_degenerate_cluster() {
        let tt = test_timetable(5);
        let cluster: Vec<RawPing> = (0..6).map(|i| ping(&tt, i * 30, 52.20, 21.00)).collect();
        assert!(matches!(
            match_direction(&cluster, &tt, "T"),
            Err(MatchError::TooFewPings(_)) | Err(MatchError::Ambiguous(_))
        ));
        assert!(matches!(
            match_direction(&cluster[..3], &tt, "T"),
            Err(MatchError::TooFewPings(3))
        ));
    }

    #[test]
    fn progress_at_stop_anchor() {
        let tt = test_timetable(6);
        let pat = tt.pattern("T", Direction::A).unwrap();
        let pos = tt.pattern_positions(pat);
        let pings = vec![ping(&tt, 0, pos[2].lat, pos[2].lon)]; // exactly at stop 3
        let rec = to_progress(&pings, pat, &tt, &MatchConfig::default()).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!(rec[0].next_stop_idx, 4);
        assert!(rec[0].at_stop);
        assert_eq!(rec[0].pct, 0.0);
    }

    #[test]
    fn progress_midpoint_of_segment() {
        let tt = test_timetable(6);
        let pat = tt.pattern("T", Direction::A).unwrap();
        let pos = tt.pattern_positions(pat);
        let mid = point_along(pos[2], pos[3], 0.5); // midpoint of segment 3->4
        let pings = vec![ping(&tt, 0, mid.lat, mid.lon)];
        let rec = to_progress(&pings, pat, &tt, &MatchConfig::default()).unwrap();
        assert_eq!(rec[0].next_stop_idx, 4);
        assert!(!rec[0].at_stop);
        assert!((rec[0].pct - 50.0).abs() < 1.0, "pct {}", rec[0].pct);
    }

    #[test]
    fn single_outlier_dropped() {
        let tt = test_timetable(6);
        let pat = tt.pattern("T", Direction::A).unwrap();
        let mut pings = sweep(&tt, 1, 6, 30);
        let k = pings.len() / 2;
        pings[k].position.lon += 0.0088; // ~600 m east
        let n_in = pings.len();
        let rec = to_progress(&pings, pat, &tt, &MatchConfig::default()).unwrap();
        assert_eq!(rec.len(), n_in - 1);
        // next_stop_idx never decreases
        for w in rec.windows(2) {
            assert!(w[1].next_stop_idx >= w[0].next_stop_idx);
        }
    }

    #[test]
    fn sustained_outliers_abort_off_route() {
        let tt = test_timetable(6);
        let pat = tt.pattern("T", Direction::A).unwrap();
        let mut pings = sweep(&tt, 1, 6, 30);
        for k in 8..14 {
            pings[k].position.lon += 0.03; // ~2 km east
        }
        let err = to_progress(&pings, pat, &tt, &MatchConfig::default()).unwrap_err();
        assert!(matches!(err, MatchError::OffRoute { first_index: 8, .. }));
    }

    #[test]
    fn trips_dwell_gives_arrival_and_departure() {
        let tt = test_timetable(4);
        let pat = tt.pattern("T", Direction::A).unwrap();
        let pos = tt.pattern_positions(pat);
        // Approach stop 2, dwell 3 pings (t=100,130,160), then move on.
        let mids: Vec<RawPing> = vec![
            ping(&tt, 10, point_along(pos[0], pos[1], 0.5).lat, 21.0),
            ping(&tt, 40, point_along(pos[0], pos[1], 0.8).lat, 21.0),
            ping(&tt, 100, pos[1].lat, pos[1].lon),
            ping(&tt, 130, pos[1].lat, pos[1].lon),
            ping(&tt, 160, pos[1].lat, pos[1].lon),
            ping(&tt, 190, point_along(pos[1], pos[2], 0.4).lat, 21.0),
            ping(&tt, 220, point_along(pos[1], pos[2], 0.8).lat, 21.0),
            ping(&tt, 250, pos[2].lat, pos[2].lon),
            ping(&tt, 280, point_along(pos[2], pos[3], 0.5).lat, 21.0),
            ping(&tt, 310, pos[3].lat, pos[3].lon),
        ];
        let rec = to_progress(&mids, pat, &tt, &MatchConfig::default()).unwrap();
        let trips = to_trips(&rec, &MatchConfig::default());
        assert_eq!(trips.len(), 1);
        let base = 10.0 * 3600.0;
        let ev = &trips[0].events;
        let stop2 = ev.iter().find(|e| e.seq == 2).unwrap();
        assert_eq!(stop2.arrival_s, base + 100.0);
        assert_eq!(stop2.departure_s, base + 160.0);
    }

    #[test]
    fn trips_interpolate_missing_at_stop_ping() {
        // Synthetic progress records with a pct-100 crossing between t=200
        // (pct 90 of segment 1) and t=230 (pct 10 of segment 2).
        let date = NaiveDate::from_ymd_opt(2021, 3, 11).unwrap();
        let mk = |t: u32, next: u32, at: bool, pct: f64| ProgressRecord {
            line: "T".into(),
            timestamp: date.and_hms_opt(0, 0, 0).unwrap() + chrono::Duration::seconds(t as i64),
            vehicle_id: "V1".into(),
            brigade: "1".into(),
            direction: Direction::A,
            next_stop_idx: next,
            at_stop: at,
            pct,
        };
        let recs = vec![
            mk(140, 2, true, 0.0),
            mk(170, 2, false, 50.0),
            mk(200, 2, false, 90.0),
            mk(230, 3, false, 10.0),
            mk(260, 3, false, 60.0),
            mk(290, 4, true, 0.0),
        ];
        let trips = to_trips(&recs, &MatchConfig::default());
        assert_eq!(trips.len(), 1);
        let ev = &trips[0].events;
        let stop2 = ev.iter().find(|e| e.seq == 2).unwrap();
        assert_eq!(stop2.arrival_s, 215.0);
        assert_eq!(stop2.departure_s, 215.0);
        let stop1 = ev.iter().find(|e| e.seq == 1).unwrap();
        assert_eq!(stop1.arrival_s, 140.0);
        let stop3 = ev.iter().find(|e| e.seq == 3).unwrap();
        assert_eq!(stop3.arrival_s, 290.0);
    }

    #[test]
    fn trips_split_on_gap_and_direction_change() {
        let date = NaiveDate::from_ymd_opt(2021, 3, 11).unwrap();
        let mk = |t: i64, dir: Direction, next: u32| ProgressRecord {
            line: "T".into(),
            timestamp: date.and_hms_opt(8, 0, 0).unwrap() + chrono::Duration::seconds(t),
            vehicle_id: "V1".into(),
            brigade: "1".into(),
            direction: dir,
            next_stop_idx: next,
            at_stop: true,
            pct: 0.0,
        };
        let recs = vec![
            mk(0, Direction::A, 2),
            mk(60, Direction::A, 3),
            mk(120, Direction::A, 4),
            // > 15 min gap
            mk(1200, Direction::A, 2),
            mk(1260, Direction::A, 3),
            // direction change
            mk(1320, Direction::B, 2),
            mk(1380, Direction::B, 3),
        ];
        let trips = to_trips(&recs, &MatchConfig::default());
        assert_eq!(trips.len(), 3);
        assert_eq!(trips[0].events.len(), 3);
        assert_eq!(trips[1].events.len(), 2);
        assert_eq!(trips[2].direction, Direction::B);
    }

    #[test]
    fn event_times_strictly_increase() {
        let tt = test_timetable(6);
        let pat = tt.pattern("T", Direction::A).unwrap();
        let pings = sweep(&tt, 1, 6, 30);
        let rec = to_progress(&pings, pat, &tt, &MatchConfig::default()).unwrap();
        let trips = to_trips(&rec, &MatchConfig::default());
        for t in &trips {
            for w in t.events.windows(2) {
                assert!(w[1].arrival_s > w[0].departure_s);
                assert!(w[0].arrival_s <= w[0].departure_s);
            }
        }
    }

    #[test]
    fn progress_csv_round_trip() {
        let tt = test_timetable(6);
        let pat = tt.pattern("T", Direction::A).unwrap();
        let pings = sweep(&tt, 1, 6, 30);
        let rec = to_progress(&pings, pat, &tt, &MatchConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("progress.csv");
        write_progress_csv(&path, &rec).unwrap();
        let back = read_progress_csv(&path).unwrap();
        assert_eq!(back.len(), rec.len());
        assert_eq!(back[0].next_stop_idx, rec[0].next_stop_idx);
        assert_eq!(back[0].timestamp, rec[0].timestamp);
        assert!((back[0].pct - rec[0].pct).abs() < 1e-3);
    }

    #[test]
    fn trips_csv_round_trip() {
        let date = NaiveDate::from_ymd_opt(2021, 3, 11).unwrap();
        let trip = TripTrace {
            line: "T".into(),
            direction: Direction::A,
            vehicle_id: "V1".into(),
            brigade: "1".into(),
            date,
            events: vec![
                StopEvent { seq: 1, arrival_s: 100.0, departure_s: 120.0 },
                StopEvent { seq: 2, arrival_s: 200.0, departure_s: 200.0 },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trips.csv");
        write_trips_csv(&path, &[trip.clone(), trip.clone()]).unwrap();
        let back = read_trips_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], trip);
    }
}
