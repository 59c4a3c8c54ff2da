//! Bus travel-time prediction pipeline.
//!
//! The crate covers the full path from raw vehicle GPS pings to evaluated
//! travel-time predictions:
//!
//! - [`geo`] — spherical distances and progress along stop-to-stop segments
//! - [`ingest`] — raw ping CSV reading and live harvesting
//! - [`timetable`] — stops, route patterns, schedules and line groups
//! - [`matching`] — pings → progress records → per-trip stop events
//! - [`features`] — labeled datasets for the hop and long-distance methods
//! - [`models`] — MLP, RBFN, historical-average and timetable predictors
//! - [`hybrid`] — per-(group, distance band) model dispatch
//! - [`eval`] — MAE/STD reports by distance band and time bucket
//! - [`synth`] — deterministic synthetic city with ground-truth travel times

pub mod eval;
pub mod features;
pub mod geo;
pub mod hybrid;
pub mod ingest;
pub mod matching;
pub mod models;
pub mod synth;
pub mod timetable;

pub use geo::GeoPoint;
pub use timetable::{Direction, Timetable};
