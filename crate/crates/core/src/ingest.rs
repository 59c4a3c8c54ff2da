//! Raw GPS ping ingestion: CSV files and live harvesting from an open-data
//! HTTP endpoint.
//!
//! Ping CSV format: `line,vehicle_id,brigade,timestamp,lat,lon`, UTF-8,
//! `\n` line endings, `.` decimal separator. Timestamps are local wall-clock
//! text `YYYY-MM-DD HH:MM:SS` (no time-zone math is performed).

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;

pub const PING_CSV_HEADER: &str = "line,vehicle_id,brigade,timestamp,lat,lon";
const TIMESTAMP_FMT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("header mismatch in {path}: expected \"{PING_CSV_HEADER}\", got \"{got}\"")]
    HeaderMismatch { path: String, got: String },
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
    #[error("endpoint unreachable after retries: {0}")]
    EndpointUnreachable(String),
    #[error("malformed response from endpoint: {0}")]
    MalformedResponse(String),
    #[error("invalid harvest config: {0}")]
    InvalidConfig(String),
}

/// One GPS report from one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPing {
    pub line: String,
    pub vehicle_id: String,
    pub brigade: String,
    pub timestamp: NaiveDateTime,
    pub position: GeoPoint,
}

impl RawPing {
    pub fn timestamp_str(&self) -> String {
        self.timestamp.format(TIMESTAMP_FMT).to_string()
    }
}

/// Result of reading a ping file: parsed rows in file order plus the count
/// of malformed rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct PingFile {
    pub pings: Vec<RawPing>,
    pub skipped: usize,
}

fn parse_ping_record(rec: &csv::StringRecord) -> Option<RawPing> {
    if rec.len() != 6 {
        return None;
    }
    let line = rec[0].trim().to_string();
    if line.is_empty() {
        return None;
    }
    let timestamp = NaiveDateTime::parse_from_str(rec[3].trim(), TIMESTAMP_FMT).ok()?;
    let lat: f64 = rec[4].trim().parse().ok()?;
    let lon: f64 = rec[5].trim().parse().ok()?;
    let position = GeoPoint::new(lat, lon).ok()?;
    Some(RawPing {
        line,
        vehicle_id: rec[1].trim().to_string(),
        brigade: rec[2].trim().to_string(),
        timestamp,
        position,
    })
}

/// Read a ping CSV. Rows that fail to parse (bad timestamp, out-of-range
/// coordinates, wrong field count) are skipped and counted, so that
/// `pings.len() + skipped` equals the number of data rows.
pub fn read_pings(path: &Path) -> Result<PingFile, IngestError> {
    if !path.exists() {
        return Err(IngestError::FileNotFound(path.display().to_string()));
    }
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let headers = rdr.headers().map_err(|e| IngestError::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    let expected: Vec<&str> = PING_CSV_HEADER.split(',').collect();
    if got != expected {
        return Err(IngestError::HeaderMismatch {
            path: path.display().to_string(),
            got: got.join(","),
        });
    }

    let mut pings = Vec::new();
    let mut skipped = 0usize;
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        match parse_ping_record(&rec) {
            Some(p) => pings.push(p),
            None => skipped += 1,
        }
    }
    Ok(PingFile { pings, skipped })
}

/// Append pings as CSV rows, writing the header first when the file is new
/// or empty.
pub fn write_pings(path: &Path, pings: &[RawPing]) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let need_header = !path.exists()
        || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let mut buf = String::new();
    if need_header {
        buf.push_str(PING_CSV_HEADER);
        buf.push('\n');
    }
    for p in pings {
        buf.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.line,
            p.vehicle_id,
            p.brigade,
            p.timestamp_str(),
            p.position.lat,
            p.position.lon
        ));
    }
    file.write_all(buf.as_bytes()).map_err(io_err)
}

/// Vehicle record as served by the JSON endpoint.
#[derive(Debug, Deserialize)]
struct EndpointVehicle {
    line: String,
    vehicle: String,
    brigade: String,
    time: String,
    lat: f64,
    lon: f64,
}

/// Harvest configuration.
#[derive(Debug, Clone)]
pub struct HarvestConfig {
    pub endpoint: String,
    /// Seconds between polls, >= 1.
    pub interval_s: u64,
    /// Total harvest duration in seconds; polls ceil(duration/interval) times.
    pub duration_s: u64,
    /// Optional `apikey` query parameter passed through verbatim.
    pub api_key: Option<String>,
}

fn poll_endpoint(client: &reqwest::blocking::Client, url: &str) -> Result<Vec<RawPing>, PollFailure> {
    let resp = client
        .get(url)
        .send()
        .and_then(|r| r.error_for_status())
        .map_err(|e| PollFailure::Network(e.to_string()))?;
    let vehicles: Vec<EndpointVehicle> = resp
        .json()
        .map_err(|e| PollFailure::Malformed(e.to_string()))?;
    let mut pings = Vec::with_capacity(vehicles.len());
    for v in vehicles {
        let timestamp = NaiveDateTime::parse_from_str(&v.time, TIMESTAMP_FMT)
            .map_err(|e| PollFailure::Malformed(format!("bad time {:?}: {e}", v.time)))?;
        let position = GeoPoint::new(v.lat, v.lon)
            .map_err(|e| PollFailure::Malformed(format!("bad position: {e}")))?;
        pings.push(RawPing {
            line: v.line,
            vehicle_id: v.vehicle,
            brigade: v.brigade,
            timestamp,
            position,
        });
    }
    Ok(pings)
}

enum PollFailure {
    Network(String),
    Malformed(String),
}

/// Poll the endpoint every `interval_s` for `duration_s`, appending the
/// received pings to `out`. Each failed poll is retried once, then logged
/// and skipped. Returns the number of pings written.
///
/// Errors only when every poll failed: [`IngestError::MalformedResponse`]
/// if any response was received but undecodable, otherwise
/// [`IngestError::EndpointUnreachable`].
pub fn harvest(config: &HarvestConfig, out: &Path) -> Result<usize, IngestError> {
    if config.interval_s < 1 {
        return Err(IngestError::InvalidConfig("interval must be >= 1 s".into()));
    }
    let polls = config.duration_s.div_ceil(config.interval_s).max(1);
    let url = match &config.api_key {
        Some(key) if config.endpoint.contains('?') => {
            format!("{}&apikey={key}", config.endpoint)
        }
        Some(key) => format!("{}?apikey={key}", config.endpoint),
        None => config.endpoint.clone(),
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(10))
        .build()
        .map_err(|e| IngestError::EndpointUnreachable(e.to_string()))?;

    let mut written = 0usize;
    let mut ok_polls = 0u64;
    let mut last_malformed: Option<String> = None;
    let mut last_network: Option<String> = None;

    for poll in 0..polls {
        if poll > 0 {
            std::thread::sleep(Duration::from_secs(config.interval_s));
        }
        let mut outcome = poll_endpoint(&client, &url);
        if outcome.is_err() {
            outcome = poll_endpoint(&client, &url); // single retry
        }
        match outcome {
            Ok(pings) => {
                write_pings(out, &pings)?;
                written += pings.len();
                ok_polls += 1;
            }
            Err(PollFailure::Network(msg)) => {
                log::warn!("poll {} failed after retry: {msg}", poll + 1);
                last_network = Some(msg);
            }
            Err(PollFailure::Malformed(msg)) => {
                log::warn!("poll {} returned malformed data: {msg}", poll + 1);
                last_malformed = Some(msg);
            }
        }
    }

    if ok_polls == 0 {
        if let Some(msg) = last_malformed {
            return Err(IngestError::MalformedResponse(msg));
        }
        return Err(IngestError::EndpointUnreachable(
            last_network.unwrap_or_else(|| "no polls attempted".into()),
        ));
    }
    Ok(written)
}
