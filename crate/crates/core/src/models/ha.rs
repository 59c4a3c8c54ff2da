//! Historical averages: mean travel times keyed by day class, 20-minute
//! departure bucket and origin stop, with per-destination means over all
//! downstream stops.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{day_key_of, ModelError};
use crate::matching::TripTrace;
use crate::timetable::{schedule_eta, Direction, Schedule};

/// Width of a departure-time bucket, seconds.
pub const BUCKET_S: f64 = 1200.0;

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DaySelector {
    /// Separate means per weekday (Monday-trained cells serve Mondays).
    SameWeekday,
    /// One pool over all working days (weekends pooled separately).
    AllWorkingDays,
}

impl DaySelector {
    pub fn parse(s: &str) -> Option<DaySelector> {
        match s.to_ascii_lowercase().as_str() {
            "same-weekday" | "same_weekday" => Some(DaySelector::SameWeekday),
            "all-working" | "all-working-days" | "all_working_days" => {
                Some(DaySelector::AllWorkingDays)
            }
            _ => None,
        }
    }
}

/// Day class a trip contributes to / a query reads from.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DayKey {
    Working,
    Weekend,
    /// 0 = Monday .. 6 = Sunday.
    Weekday(u8),
}

/// One populated cell: mean travel seconds and contributing trip count.
#[derive(Debug, Copy, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaCell {
    pub mean_s: f64,
    pub count: u32,
}

type CellKey = (String, Direction, DayKey, u32, u16); // line, dir, day, origin, bucket

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HaEntry {
    line: String,
    direction: Direction,
    day: DayKey,
    origin: u32,
    bucket: u16,
    dests: BTreeMap<u32, HaCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HaTableRepr {
    selector: DaySelector,
    entries: Vec<HaEntry>,
}

/// The historical-average lookup table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "HaTableRepr", into = "HaTableRepr")]
pub struct HaTable {
    pub selector: DaySelector,
    cells: BTreeMap<CellKey, BTreeMap<u32, HaCell>>,
}

impl From<HaTableRepr> for HaTable {
    fn from(repr: HaTableRepr) -> Self {
        let cells = repr
            .entries
            .into_iter()
            .map(|e| ((e.line, e.direction, e.day, e.origin, e.bucket), e.dests))
            .collect();
        Self {
            selector: repr.selector,
            cells,
        }
    }
}

impl From<HaTable> for HaTableRepr {
    fn from(table: HaTable) -> Self {
        let entries = table
            .cells
            .into_iter()
            .map(|((line, direction, day, origin, bucket), dests)| HaEntry {
                line,
                direction,
                day,
                origin,
                bucket,
                dests,
            })
            .collect();
        Self {
            selector: table.selector,
            entries,
        }
    }
}

impl HaTable {
    pub fn bucket_of(depart_s: f64) -> u16 {
        (depart_s.max(0.0) / BUCKET_S).floor() as u16
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn populated_cells(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }

    /// Exact cell lookup.
    pub fn cell(
        &self,
        line: &str,
        direction: Direction,
        day: DayKey,
        origin: u32,
        bucket: u16,
        dest: u32,
    ) -> Option<HaCell> {
        self.cells
            .get(&(line.to_string(), direction, day, origin, bucket))
            .and_then(|dests| dests.get(&dest))
            .copied()
    }

    /// Exact lookup, then nearest nonempty bucket for the same origin
    /// (ties toward the earlier bucket).
    pub fn lookup(
        &self,
        line: &str,
        direction: Direction,
        day: DayKey,
        origin: u32,
        dest: u32,
        bucket: u16,
    ) -> Option<HaCell> {
        if let Some(c) = self.cell(line, direction, day, origin, bucket, dest) {
            return Some(c);
        }
        let lo = (line.to_string(), direction, day, origin, u16::MIN);
        let hi = (line.to_string(), direction, day, origin, u16::MAX);
        let mut best: Option<(u16, HaCell)> = None;
        for (key, dests) in self.cells.range(lo..=hi) {
            let b = key.4;
            let Some(&cell) = dests.get(&dest) else { continue };
            let gap = b.abs_diff(bucket);
            let better = match best {
                None => true,
                Some((bb, _)) => {
                    let bg = bb.abs_diff(bucket);
                    gap < bg || (gap == bg && b < bb)
                }
            };
            if better {
                best = Some((b, cell));
            }
        }
        best.map(|(_, c)| c)
    }
}

/// Average travel times per (day class, departure bucket, origin stop) over
/// every downstream stop, exactly the group-by mean of
/// `arrival(dest) - departure(origin)` across the given trips.
pub fn build_ha(trips: &[TripTrace], selector: DaySelector) -> HaTable {
    let mut acc: BTreeMap<CellKey, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for trip in trips {
        let day = day_key_of(trip.date, selector);
        for i in 0..trip.events.len() {
            let origin = &trip.events[i];
            let bucket = HaTable::bucket_of(origin.departure_s);
            for dest in &trip.events[i + 1..] {
                let tt = dest.arrival_s - origin.departure_s;
                if tt <= 0.0 {
                    continue;
                }
                acc.entry((
                    trip.line.clone(),
                    trip.direction,
                    day,
                    origin.seq,
                    bucket,
                ))
                .or_default()
                .entry(dest.seq)
                .or_default()
                .push(tt);
            }
        }
    }

    let cells = acc
        .into_iter()
        .map(|(key, dests)| {
            let means = dests
                .into_iter()
                .map(|(dest, values)| {
                    let sum: f64 = values.iter().sum();
                    (
                        dest,
                        HaCell {
                            mean_s: sum / values.len() as f64,
                            count: values.len() as u32,
                        },
                    )
                })
                .collect();
            (key, means)
        })
        .collect();
    HaTable { selector, cells }
}

/// An HA prediction, flagged when it fell back to the schedule.
#[derive(Debug, Copy, Clone, PartialEq)]
pub struct HaPrediction {
    pub seconds: f64,
    pub used_fallback: bool,
}

/// Predict travel seconds from `origin` to `dest` departing at `depart_s`
/// on `date`. Empty cells fall back to the nearest nonempty bucket for the
/// same origin; a fully empty table falls back to the schedule (flagged);
/// with no schedule either, [`ModelError::NoDataAnywhere`].
#[allow(clippy::too_many_arguments)]
pub fn ha_predict(
    table: &HaTable,
    line: &str,
    direction: Direction,
    origin: u32,
    dest: u32,
    depart_s: f64,
    date: NaiveDate,
    fallback: Option<&Schedule>,
) -> Result<HaPrediction, ModelError> {
    assert!(origin < dest, "origin must precede dest");
    let day = day_key_of(date, table.selector);
    let bucket = HaTable::bucket_of(depart_s);
    if let Some(cell) = table.lookup(line, direction, day, origin, dest, bucket) {
        return Ok(HaPrediction {
            seconds: cell.mean_s,
            used_fallback: false,
        });
    }
    match fallback {
        Some(schedule) => {
            let seconds = schedule_eta(schedule, line, direction, origin, dest, depart_s)?;
            Ok(HaPrediction {
                seconds,
                used_fallback: true,
            })
        }
        None => Err(ModelError::NoDataAnywhere),
    }
}
