//! Deterministic synthetic-city generator with exact ground-truth travel
//! times. Each run's actual stop arrivals and departures go to `truth.csv`,
//! making the generator the brute-force oracle for every pipeline stage.
//!
//! Hop times are `base × rush multiplier × segment bias × run factor ×
//! lognormal noise`. Rush multipliers are reflected in the published
//! schedule; segment biases, run factors and noise are not — they model
//! real-world conditions the timetable cannot see.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::ingest::{self, RawPing};
use crate::timetable::Direction;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
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
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthLine {
    pub line: String,
    /// Stops per direction, 2..=40.
    pub stops: u32,
}

/// Hop-time multiplier active between two hours of day.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RushWindow {
    pub start_hour: u32,
    pub end_hour: u32,
    pub factor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub lines: Vec<SynthLine>,
    /// Straight-line distance between consecutive stops, meters.
    pub stop_spacing_m: f64,
    /// Base hop travel time, seconds.
    pub base_hop_s: f64,
    pub rush_windows: Vec<RushWindow>,
    /// Lognormal sigma of independent per-hop noise (0 disables).
    pub noise_sigma: f64,
    /// Lognormal sigma of a persistent per-run speed factor (0 disables).
    pub run_factor_sigma: f64,
    /// Uniform range of a persistent per-segment multiplier, drawn once per
    /// (line, direction, segment) and unknown to the schedule.
    pub segment_bias: (f64, f64),
    /// Dwell at intermediate stops, seconds.
    pub dwell_s: f64,
    pub ping_interval_s: f64,
    pub days: Vec<NaiveDate>,
    /// Probability that a ping is displaced by 200-1000 m.
    pub glitch_rate: f64,
    /// First and last scheduled departure from stop 1, seconds of day.
    pub first_depart_s: f64,
    pub last_depart_s: f64,
    pub headway_s: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            lines: vec![
                SynthLine { line: "S01".into(), stops: 20 },
                SynthLine { line: "S02".into(), stops: 20 },
            ],
            stop_spacing_m: 500.0,
            base_hop_s: 90.0,
            rush_windows: vec![
                RushWindow { start_hour: 7, end_hour: 10, factor: 1.3 },
                RushWindow { start_hour: 15, end_hour: 19, factor: 1.3 },
            ],
            noise_sigma: 0.0,
            run_factor_sigma: 0.0,
            segment_bias: (1.0, 1.0),
            dwell_s: 20.0,
            ping_interval_s: 30.0,
            days: working_days(NaiveDate::from_ymd_opt(2021, 3, 8).unwrap(), 5),
            glitch_rate: 0.0,
            first_depart_s: 6.0 * 3600.0,
            last_depart_s: 22.0 * 3600.0,
            headway_s: 1200.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::InvalidSpec(msg.into()));
        if self.lines.is_empty() {
            return bad("no lines");
        }
        for l in &self.lines {
            if !(2..=40).contains(&l.stops) {
                return bad("stops per line must be in 2..=40");
            }
        }
        if self.base_hop_s <= 0.0 || self.stop_spacing_m <= 0.0 || self.ping_interval_s <= 0.0 {
            return bad("base hop, stop spacing and ping interval must be positive");
        }
        if self.rush_windows.iter().any(|w| w.factor < 1.0) {
            return bad("rush multipliers must be >= 1");
        }
        if self.days.is_empty() {
            return bad("no days");
        }
        if !(0.0..=1.0).contains(&self.glitch_rate) {
            return bad("glitch rate must be in [0, 1]");
        }
        if self.noise_sigma < 0.0 || self.run_factor_sigma < 0.0 {
            return bad("sigmas must be >= 0");
        }
        if self.segment_bias.0 <= 0.0 || self.segment_bias.1 < self.segment_bias.0 {
            return bad("segment bias range must be positive and ordered");
        }
        Ok(())
    }

    fn rush_multiplier(&self, time_s: f64) -> f64 {
        let hour = time_s / 3600.0;
        for w in &self.rush_windows {
            if hour >= w.start_hour as f64 && hour < w.end_hour as f64 {
                return w.factor;
            }
        }
        1.0
    }
}

/// `count` consecutive working days starting at or after `start`.
pub fn working_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut days = Vec::with_capacity(count);
    let mut d = start;
    while days.len() < count {
        if d.weekday() != Weekday::Sat && d.weekday() != Weekday::Sun {
            days.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    days
}

/// One ground-truth stop event of one actual run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    /// Global run index, unique per (line, direction) across all days.
    pub run: u32,
    /// 1-based stop seq.
    pub seq: u32,
    /// Seconds since the first day's local midnight.
    pub arrival_s: f64,
    pub departure_s: f64,
}

/// Ground truth grouped per (line, direction).
#[derive(Debug, Clone, Default)]
pub struct TruthTable {
    pub records: Vec<(String, Direction, TruthRecord)>,
}

impl TruthTable {
    /// Events of one run, in stop order.
    pub fn run_events(&self, line: &str, direction: Direction, run: u32) -> Vec<TruthRecord> {
        self.records
            .iter()
            .filter(|(l, d, r)| l == line && *d == direction && r.run == run)
            .map(|(_, _, r)| *r)
            .collect()
    }

    /// (day index, seconds-of-day) for an epoch-seconds value.
    pub fn split_epoch(epoch_s: f64) -> (usize, f64) {
        let day = (epoch_s / 86_400.0).floor() as usize;
        (day, epoch_s - day as f64 * 86_400.0)
    }
}

/// File names written by [`generate`].
pub const STOPS_FILE: &str = "stops.csv";
pub const PATTERNS_FILE: &str = "patterns.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const PINGS_FILE: &str = "pings.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SPEC_FILE: &str = "synth_spec.json";

struct LineGeometry {
    stop_ids: Vec<String>,
    positions: Vec<GeoPoint>,
}

fn line_geometry(spec: &SynthSpec, line_index: usize, line: &SynthLine) -> LineGeometry {
    // Parallel west-east lines, far enough apart not to interfere.
    let lat = 52.10 + 0.012 * line_index as f64;
    let lon0 = 20.90;
    let dlon = spec.stop_spacing_m / (111_320.0 * lat.to_radians().cos());
    let mut stop_ids = Vec::new();
    let mut positions = Vec::new();
    for j in 0..line.stops {
        stop_ids.push(format!("{}-{:02}", line.line, j + 1));
        positions.push(GeoPoint { lat, lon: lon0 + dlon * j as f64 });
    }
    LineGeometry { stop_ids, positions }
}

fn write_file(path: &Path, content: &str) -> Result<(), SynthError> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(content.as_bytes()))
        .map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Simulate the city and write `stops.csv`, `patterns.csv`, `schedule.csv`,
/// `pings.csv`, `truth.csv` and the spec snapshot into `out_dir`.
///
/// Identical specs produce byte-identical outputs.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<(), SynthError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let mut stops_csv = String::from("stop_id,lat,lon\n");
    let mut patterns_csv = String::from("line,direction,seq,stop_id\n");
    let mut schedule_csv = String::from("line,direction,seq,run,depart_seconds\n");
    let mut truth_csv = String::from("line,direction,run,seq,arrival_s,departure_s\n");
    let mut pings: Vec<RawPing> = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let displacement = Uniform::new(200.0f64, 1000.0);
    let bearing = Uniform::new(0.0f64, std::f64::consts::TAU);

    let run_count =
        (((spec.last_depart_s - spec.first_depart_s) / spec.headway_s).floor() as u32) + 1;

    for (li, line) in spec.lines.iter().enumerate() {
        let geom = line_geometry(spec, li, line);
        for (sid, pos) in geom.stop_ids.iter().zip(&geom.positions) {
            stops_csv.push_str(&format!("{sid},{},{}\n", pos.lat, pos.lon));
        }
        for direction in [Direction::A, Direction::B] {
            let n = line.stops as usize;
            let (ids, positions): (Vec<&String>, Vec<GeoPoint>) = match direction {
                Direction::A => (geom.stop_ids.iter().collect(), geom.positions.clone()),
                Direction::B => (
                    geom.stop_ids.iter().rev().collect(),
                    geom.positions.iter().rev().cloned().collect(),
                ),
            };
            for (j, sid) in ids.iter().enumerate() {
                patterns_csv.push_str(&format!("{},{},{},{}\n", line.line, direction, j + 1, sid));
            }

            // Persistent per-segment multipliers, unknown to the schedule.
            let seg_bias: Vec<f64> = (0..n - 1)
                .map(|_| {
                    if spec.segment_bias.0 == spec.segment_bias.1 {
                        spec.segment_bias.0
                    } else {
                        rng.gen_range(spec.segment_bias.0..spec.segment_bias.1)
                    }
                })
                .collect();

            // Published schedule: rush-aware, bias-blind, identical every day.
            for run in 0..run_count {
                let t0 = spec.first_depart_s + run as f64 * spec.headway_s;
                let mut dep = t0;
                for seq in 1..=n {
                    schedule_csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        line.line, direction, seq, run, dep
                    ));
                    if seq < n {
                        dep += spec.base_hop_s * spec.rush_multiplier(dep) + spec.dwell_s;
                    }
                }
            }

            // Actual runs, one vehicle per run.
            let mut global_run = 0u32;
            for (day_idx, day) in spec.days.iter().enumerate() {
                let day_offset = day_idx as f64 * 86_400.0;
                for run in 0..run_count {
                    let t0 = spec.first_depart_s + run as f64 * spec.headway_s;
                    let run_factor = if spec.run_factor_sigma > 0.0 {
                        LogNormal::new(0.0, spec.run_factor_sigma).unwrap().sample(&mut rng)
                    } else {
                        1.0
                    };

                    // Stop 1: the vehicle stands at the origin for 60 s.
                    let mut arrivals = vec![t0 - 60.0];
                    let mut departures = vec![t0];
                    for s in 0..n - 1 {
                        let dep = departures[s];
                        let noise = if spec.noise_sigma > 0.0 {
                            LogNormal::new(0.0, spec.noise_sigma).unwrap().sample(&mut rng)
                        } else {
                            1.0
                        };
                        let hop =
                            spec.base_hop_s * spec.rush_multiplier(dep) * seg_bias[s] * run_factor * noise;
                        let arr = dep + hop;
                        arrivals.push(arr);
                        departures.push(if s + 2 < n { arr + spec.dwell_s } else { arr });
                    }

                    for seq in 1..=n {
                        truth_csv.push_str(&format!(
                            "{},{},{},{},{:.3},{:.3}\n",
                            line.line,
                            direction,
                            global_run,
                            seq,
                            day_offset + arrivals[seq - 1],
                            day_offset + departures[seq - 1],
                        ));
                    }

                    // Pings on a shared 30 s poll grid.
                    let vehicle_id = format!("{}{}R{:03}", line.line, direction, run);
                    let start = arrivals[0];
                    let end = arrivals[n - 1] + 60.0;
                    let mut t = (start / spec.ping_interval_s).ceil() * spec.ping_interval_s;
                    while t <= end {
                        let pos = position_at(t, &arrivals, &departures, &positions);
                        let pos = if spec.glitch_rate > 0.0 && rng.gen::<f64>() < spec.glitch_rate {
                            let r = displacement.sample(&mut rng);
                            let theta = bearing.sample(&mut rng);
                            GeoPoint {
                                lat: pos.lat + r * theta.cos() / 111_320.0,
                                lon: pos.lon
                                    + r * theta.sin() / (111_320.0 * pos.lat.to_radians().cos()),
                            }
                        } else {
                            pos
                        };
                        let secs = t.floor() as u32;
                        pings.push(RawPing {
                            line: line.line.clone(),
                            vehicle_id: vehicle_id.clone(),
                            brigade: format!("{run}"),
                            timestamp: day
                                .and_hms_opt(secs / 3600, (secs / 60) % 60, secs % 60)
                                .expect("run times stay within the day"),
                            position: pos,
                        });
                        t += spec.ping_interval_s;
                    }
                    global_run += 1;
                }
            }
        }
    }

    write_file(&out_dir.join(STOPS_FILE), &stops_csv)?;
    write_file(&out_dir.join(PATTERNS_FILE), &patterns_csv)?;
    write_file(&out_dir.join(SCHEDULE_FILE), &schedule_csv)?;
    write_file(&out_dir.join(TRUTH_FILE), &truth_csv)?;

    let pings_path = out_dir.join(PINGS_FILE);
    write_file(&pings_path, "")?;
    ingest::write_pings(&pings_path, &pings).map_err(|e| SynthError::Io {
        path: pings_path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;

    let spec_json = serde_json::to_string_pretty(spec).expect("spec serializes");
    write_file(&out_dir.join(SPEC_FILE), &spec_json)?;
    Ok(())
}

/// Vehicle position at time `t` given the run's truth arrays (stop 1 holds
/// before departure, terminal holds after arrival).
fn position_at(t: f64, arrivals: &[f64], departures: &[f64], positions: &[GeoPoint]) -> GeoPoint {
    let n = positions.len();
    if t <= departures[0] {
        return positions[0];
    }
    for s in 0..n - 1 {
        if t < arrivals[s + 1] {
            if t <= departures[s] {
                return positions[s];
            }
            let frac = (t - departures[s]) / (arrivals[s + 1] - departures[s]);
            return crate::geo::point_along(positions[s], positions[s + 1], frac);
        }
    }
    positions[n - 1]
}

/// Exact trip traces straight from the ground truth, bypassing GPS
/// matching. One trace per actual run, with the run-of-day index as the
/// brigade and the same vehicle naming as the ping stream.
pub fn truth_to_trips(truth: &TruthTable, spec: &SynthSpec) -> Vec<crate::matching::TripTrace> {
    let runs_per_day =
        (((spec.last_depart_s - spec.first_depart_s) / spec.headway_s).floor() as u32) + 1;
    let mut by_run: std::collections::BTreeMap<(String, Direction, u32), Vec<TruthRecord>> =
        std::collections::BTreeMap::new();
    for (line, direction, rec) in &truth.records {
        by_run
            .entry((line.clone(), *direction, rec.run))
            .or_default()
            .push(*rec);
    }
    let mut trips = Vec::new();
    for ((line, direction, run), mut events) in by_run {
        events.sort_by_key(|e| e.seq);
        let (day_idx, _) = TruthTable::split_epoch(events[0].arrival_s);
        let Some(&date) = spec.days.get(day_idx) else { continue };
        let offset = day_idx as f64 * 86_400.0;
        let run_of_day = run % runs_per_day;
        trips.push(crate::matching::TripTrace {
            line: line.clone(),
            direction,
            vehicle_id: format!("{line}{direction}R{run_of_day:03}"),
            brigade: format!("{run_of_day}"),
            date,
            events: events
                .into_iter()
                .map(|e| crate::matching::StopEvent {
                    seq: e.seq,
                    arrival_s: e.arrival_s - offset,
                    departure_s: e.departure_s - offset,
                })
                .collect(),
        });
    }
    trips
}

/// Read a `truth.csv` produced by [`generate`].
pub fn read_truth(path: &Path) -> Result<TruthTable, SynthError> {
    let file = std::fs::File::open(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut table = TruthTable::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SynthError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let bad = |msg: String| SynthError::InvalidSpec(format!("truth.csv: {msg}"));
        let direction =
            Direction::parse(&rec[1]).ok_or_else(|| bad(format!("bad direction {:?}", &rec[1])))?;
        table.records.push((
            rec[0].to_string(),
            direction,
            TruthRecord {
                run: rec[2].parse().map_err(|e| bad(format!("bad run: {e}")))?,
                seq: rec[3].parse().map_err(|e| bad(format!("bad seq: {e}")))?,
                arrival_s: rec[4].parse().map_err(|e| bad(format!("bad arrival: {e}")))?,
                departure_s: rec[5].parse().map_err(|e| bad(format!("bad departure: {e}")))?,
            },
        ));
    }
    Ok(table)
}
