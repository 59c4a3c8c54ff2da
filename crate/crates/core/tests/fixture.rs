//! The bundled line-523 recording against its manifest, end to end through
//! matching and dataset construction.

use std::path::PathBuf;

use transit_eta_core::features::{build_hop_dataset, FeatureContext, FeatureSet};
use transit_eta_core::ingest::read_pings;
use transit_eta_core::matching::{process_pings, MatchConfig};
use transit_eta_core::timetable::load_timetable;

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[derive(serde::Deserialize)]
struct FixtureManifest {
    file: String,
    rows: usize,
    first_timestamp: String,
    last_timestamp: String,
    line: String,
}

fn load_manifest() -> FixtureManifest {
    let data = std::fs::read_to_string(fixtures_dir().join("manifest.json")).unwrap();
    serde_json::from_str(&data).unwrap()
}

#[test]
fn fixture_parses_to_manifest_counts_and_timestamps() {
    let manifest = load_manifest();
    let got = read_pings(&fixtures_dir().join(&manifest.file)).unwrap();
    assert_eq!(got.pings.len(), manifest.rows);
    assert_eq!(got.skipped, 0);
    assert_eq!(got.pings[0].timestamp_str(), manifest.first_timestamp);
    assert_eq!(
        got.pings.last().unwrap().timestamp_str(),
        manifest.last_timestamp
    );
    assert!(got.pings.iter().all(|p| p.line == manifest.line));
}

#[test]
fn fixture_yields_trips_and_datasets() {
    let manifest = load_manifest();
    let pings = read_pings(&fixtures_dir().join(&manifest.file)).unwrap();
    let tt_dir = fixtures_dir().join("timetable_523");
    let tt = load_timetable(
        &tt_dir.join("stops.csv"),
        &tt_dir.join("patterns.csv"),
        &tt_dir.join("schedule.csv"),
    )
    .unwrap();

    let out = process_pings(&pings.pings, &tt, &MatchConfig::default());
    assert!(!out.trips.is_empty());
    for trip in &out.trips {
        for w in trip.events.windows(2) {
            assert!(w[1].arrival_s > w[0].departure_s, "event times must increase");
            assert!(w[1].seq > w[0].seq);
        }
    }

    let hop = build_hop_dataset(&out.trips, FeatureSet::Basic, FeatureContext::default()).unwrap();
    assert!(!hop.samples.is_empty());
    for s in &hop.samples {
        assert!(s.label > 0.0);
    }
}
