//! Command-line front door for the travel-time prediction pipeline.
//!
//! Typical flow:
//!   transit-eta synth --seed 7 --out city/
//!   transit-eta preprocess --pings city/pings.csv --timetable-dir city/ --out-dir work/
//!   transit-eta build-dataset --trips work/trips.csv --method longdist --features basic --out work/train.csv
//!   transit-eta train --dataset work/train.csv --model mlp --features basic --seed 1 --out work/mlp.json
//!   transit-eta evaluate --model work/mlp.json --dataset work/test.csv --out-dir work/eval/
//!
//! Every run writes a manifest (config, seed, input hashes) next to its
//! outputs. Exit codes: 0 ok, 2 usage error, 3 data error, 4 training
//! divergence.

mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use manifest::Manifest;
use transit_eta_core::eval::{self, EvalSpec};
use transit_eta_core::features::{
    build_hop_dataset, build_longdist_dataset, read_dataset_csv, write_dataset_csv, FeatureContext,
    FeatureSet, FeatureVector, SampleMeta, SegmentAuxTable, TravelSample, WeatherTable,
};
use transit_eta_core::hybrid::{
    dispatch, DispatchTable, HybridModel, ModelRegistry,
};
use transit_eta_core::ingest::{harvest, read_pings, HarvestConfig};
use transit_eta_core::matching::{
    process_pings, read_progress_csv, read_trips_csv, write_progress_csv, write_trips_csv,
    MatchConfig,
};
use transit_eta_core::models::{
    build_ha, load_model, predict_longdist, predict_recursive, save_model, Activation, DaySelector,
    MlpConfig, ModelError, ModelKind, ModelParams, RbfnConfig, RbfnTraining,
    TrainedModel, TrainingMeta,
};
use transit_eta_core::synth::{self, SynthLine, SynthSpec};
use transit_eta_core::timetable::{load_timetable, GroupTable, LineGroup, Timetable};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "transit-eta", version, about = "Bus travel-time prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Poll a vehicle-position endpoint into a ping CSV.
    Harvest(HarvestArgs),
    /// Generate a synthetic city with ground-truth travel times.
    Synth(SynthArgs),
    /// Match raw pings onto routes: progress records and trip traces.
    Preprocess(PreprocessArgs),
    /// Build a labeled dataset from trip traces.
    BuildDataset(BuildDatasetArgs),
    /// Train an MLP or RBFN (or package the timetable baseline).
    Train(TrainArgs),
    /// Build a historical-average model from trip traces.
    BuildHa(BuildHaArgs),
    /// Predict travel seconds for one query.
    Predict(PredictArgs),
    /// Evaluate a model (or the hybrid dispatcher) over a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Compare evaluation reports from the same test set.
    Compare(CompareArgs),
    /// Print the dispatch table and verify the built-in cells.
    DispatchCheck(DispatchCheckArgs),
}

#[derive(Args)]
struct HarvestArgs {
    #[arg(long)]
    endpoint: String,
    /// Seconds between polls.
    #[arg(long, default_value_t = 30)]
    interval: u64,
    /// Total seconds to harvest.
    #[arg(long, default_value_t = 3600)]
    duration: u64,
    #[arg(long)]
    out: PathBuf,
    /// Passed through as an `apikey` query parameter.
    #[arg(long)]
    api_key: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Full SynthSpec JSON; flags below override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lines: Option<u32>,
    #[arg(long)]
    stops: Option<u32>,
    /// Number of working days to simulate.
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    start_date: Option<NaiveDate>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    run_factor_sigma: Option<f64>,
    /// Per-segment persistent multiplier range, e.g. 0.8:1.5.
    #[arg(long)]
    segment_bias: Option<String>,
    #[arg(long)]
    glitch_rate: Option<f64>,
    #[arg(long)]
    base_hop: Option<f64>,
    #[arg(long)]
    dwell: Option<f64>,
    #[arg(long)]
    headway: Option<f64>,
    /// Rush windows, e.g. 7-10:1.3,15-19:1.3 (empty string disables).
    #[arg(long)]
    rush: Option<String>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    pings: PathBuf,
    /// Directory with stops.csv, patterns.csv, schedule.csv.
    #[arg(long)]
    timetable_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    at_stop_radius: f64,
    #[arg(long, default_value_t = 500.0)]
    off_route: f64,
    #[arg(long, default_value_t = 900.0)]
    trip_gap: f64,
    #[arg(long, default_value_t = 3)]
    max_outliers: usize,
    #[arg(long, default_value_t = 12.0)]
    max_speed: f64,
}

#[derive(Args)]
struct BuildDatasetArgs {
    #[arg(long)]
    trips: PathBuf,
    /// hop (recursive method) or longdist.
    #[arg(long)]
    method: String,
    /// basic, timetable or histavg.
    #[arg(long)]
    features: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    timetable_dir: Option<PathBuf>,
    /// HA model file providing the ha_eta feature.
    #[arg(long)]
    ha_model: Option<PathBuf>,
    #[arg(long)]
    segments_aux: Option<PathBuf>,
    #[arg(long)]
    weather: Option<PathBuf>,
    /// progress.csv for the congestion column.
    #[arg(long)]
    congestion_from: Option<PathBuf>,
    /// Keep only these lines.
    #[arg(long)]
    lines: Option<String>,
    /// Keep only these dates (comma-separated).
    #[arg(long)]
    dates: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV (not needed for --model timetable).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// mlp, rbfn or timetable.
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "basic")]
    features: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict training to these dates; must be disjoint from --test-dates.
    #[arg(long)]
    train_dates: Option<String>,
    /// Held-out dates (recorded, never trained on).
    #[arg(long)]
    test_dates: Option<String>,
    /// Same-weekday protocol: train on this date's weekday from the three
    /// prior weeks, hold the date itself out (sets both date lists).
    #[arg(long)]
    protocol_test_date: Option<NaiveDate>,
    #[arg(long)]
    line: Option<String>,
    /// MLP hidden widths, e.g. 12,32.
    #[arg(long, default_value = "12,32")]
    hidden: String,
    /// Activations per hidden layer (relu/tanh); one entry applies to all.
    #[arg(long, default_value = "relu")]
    activations: String,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// RBFN hidden unit count (presets 10, 15, 25, 35).
    #[arg(long, default_value_t = 25)]
    centers: usize,
    /// Optional RBFN gradient fine-tuning, e.g. 100:0.01 (epochs:lr).
    #[arg(long)]
    rbf_tune: Option<String>,
    /// Timetable directory (required for --model timetable).
    #[arg(long)]
    timetable_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BuildHaArgs {
    #[arg(long)]
    trips: PathBuf,
    /// all-working or same-weekday.
    #[arg(long, default_value = "all-working")]
    selector: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    line: Option<String>,
    /// Restrict to these dates.
    #[arg(long)]
    dates: Option<String>,
    /// Adds a schedule fallback for empty tables.
    #[arg(long)]
    timetable_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Query JSON: {"features": {...}, "meta": {...}}.
    #[arg(long)]
    query: PathBuf,
    /// Chain this many single-hop predictions (hop models).
    #[arg(long)]
    recursive: Option<usize>,
    /// Stop count of the route (required with --recursive).
    #[arg(long)]
    route_len: Option<u32>,
    /// Dispatch through a model registry instead of a single model.
    #[arg(long)]
    hybrid: bool,
    #[arg(long)]
    registry_dir: Option<PathBuf>,
    #[arg(long)]
    dispatch: Option<PathBuf>,
    #[arg(long)]
    groups: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// tables, figures or rush.
    #[arg(long, default_value = "tables")]
    spec: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    hybrid: bool,
    #[arg(long)]
    registry_dir: Option<PathBuf>,
    #[arg(long)]
    dispatch: Option<PathBuf>,
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Overrides the report's model id.
    #[arg(long)]
    model_id: Option<String>,
    /// Supplies route lengths for curve end markers.
    #[arg(long)]
    timetable_dir: Option<PathBuf>,
    #[arg(long)]
    dates: Option<String>,
    #[arg(long)]
    lines: Option<String>,
    /// Standard deviation over `absolute` (default) or `signed` errors.
    #[arg(long, default_value = "absolute")]
    std_mode: String,
}

#[derive(Args)]
struct CompareArgs {
    /// Two or more report.json paths, comma-separated.
    #[arg(long)]
    reports: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DispatchCheckArgs {
    /// Optional override table to diff against the built-ins.
    #[arg(long)]
    dispatch: Option<PathBuf>,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Harvest(args) => cmd_harvest(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::BuildDataset(args) => cmd_build_dataset(args),
        Command::Train(args) => cmd_train(args),
        Command::BuildHa(args) => cmd_build_ha(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::DispatchCheck(args) => cmd_dispatch_check(args),
    }
}

fn parse_dates(s: &str) -> Result<Vec<NaiveDate>, CliError> {
    s.split(',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|e| CliError::Usage(format!("bad date {t:?}: {e}")))
        })
        .collect()
}

fn parse_lines(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

fn load_tt_dir(dir: &Path) -> Result<Timetable, CliError> {
    load_timetable(
        &dir.join("stops.csv"),
        &dir.join("patterns.csv"),
        &dir.join("schedule.csv"),
    )
    .map_err(data_err)
}

fn timetable_manifest_inputs(m: &mut Manifest, dir: &Path) -> Result<(), CliError> {
    for f in ["stops.csv", "patterns.csv", "schedule.csv"] {
        m.add_input(&dir.join(f)).map_err(data_err)?;
    }
    Ok(())
}

fn cmd_harvest(args: HarvestArgs) -> Result<(), CliError> {
    if args.interval < 1 {
        return Err(CliError::Usage("--interval must be >= 1".into()));
    }
    let config = HarvestConfig {
        endpoint: args.endpoint.clone(),
        interval_s: args.interval,
        duration_s: args.duration,
        api_key: args.api_key.clone(),
    };
    let written = harvest(&config, &args.out).map_err(data_err)?;
    let mut m = Manifest::new(
        "harvest",
        json!({
            "endpoint": args.endpoint,
            "interval_s": args.interval,
            "duration_s": args.duration,
        }),
        None,
    );
    m.add_output(&args.out);
    m.write(&args.out).map_err(data_err)?;
    println!("harvested {written} pings into {}", args.out.display());
    Ok(())
}

fn parse_rush(s: &str) -> Result<Vec<synth::RushWindow>, CliError> {
    let mut windows = Vec::new();
    for token in s.split(',').filter(|t| !t.is_empty()) {
        let bad = || CliError::Usage(format!("bad rush window {token:?} (use 7-10:1.3)"));
        let (range, factor) = token.split_once(':').ok_or_else(bad)?;
        let (lo, hi) = range.split_once('-').ok_or_else(bad)?;
        windows.push(synth::RushWindow {
            start_hour: lo.parse().map_err(|_| bad())?,
            end_hour: hi.parse().map_err(|_| bad())?,
            factor: factor.parse().map_err(|_| bad())?,
        });
    }
    Ok(windows)
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &args.config {
        Some(path) => {
            let data = std::fs::read_to_string(path).map_err(data_err)?;
            serde_json::from_str::<SynthSpec>(&data)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::default(),
    };
    spec.seed = args.seed;
    if let Some(n) = args.lines {
        let stops = args.stops.unwrap_or(20);
        spec.lines = (1..=n)
            .map(|i| SynthLine {
                line: format!("S{i:02}"),
                stops,
            })
            .collect();
    } else if let Some(stops) = args.stops {
        for l in &mut spec.lines {
            l.stops = stops;
        }
    }
    if let Some(days) = args.days {
        let start = args
            .start_date
            .unwrap_or_else(|| NaiveDate::from_ymd_opt(2021, 3, 8).unwrap());
        spec.days = synth::working_days(start, days);
    }
    if let Some(v) = args.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.run_factor_sigma {
        spec.run_factor_sigma = v;
    }
    if let Some(v) = &args.segment_bias {
        let (lo, hi) = v
            .split_once(':')
            .ok_or_else(|| CliError::Usage("--segment-bias expects LO:HI".into()))?;
        spec.segment_bias = (
            lo.parse().map_err(|_| CliError::Usage("bad segment bias".into()))?,
            hi.parse().map_err(|_| CliError::Usage("bad segment bias".into()))?,
        );
    }
    if let Some(v) = args.glitch_rate {
        spec.glitch_rate = v;
    }
    if let Some(v) = args.base_hop {
        spec.base_hop_s = v;
    }
    if let Some(v) = args.dwell {
        spec.dwell_s = v;
    }
    if let Some(v) = args.headway {
        spec.headway_s = v;
    }
    if let Some(v) = &args.rush {
        spec.rush_windows = parse_rush(v)?;
    }

    synth::generate(&spec, &args.out).map_err(data_err)?;

    let mut m = Manifest::new(
        "synth",
        serde_json::to_value(&spec).expect("spec serializes"),
        Some(spec.seed),
    );
    for f in [
        synth::STOPS_FILE,
        synth::PATTERNS_FILE,
        synth::SCHEDULE_FILE,
        synth::PINGS_FILE,
        synth::TRUTH_FILE,
        synth::SPEC_FILE,
    ] {
        m.add_output(&args.out.join(f));
    }
    m.write(&args.out).map_err(data_err)?;
    println!(
        "synthesized {} lines x {} days into {}",
        spec.lines.len(),
        spec.days.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), CliError> {
    let tt = load_tt_dir(&args.timetable_dir)?;
    let pings = read_pings(&args.pings).map_err(data_err)?;
    let config = MatchConfig {
        at_stop_radius_m: args.at_stop_radius,
        off_route_m: args.off_route,
        trip_gap_s: args.trip_gap,
        max_consecutive_outliers: args.max_outliers,
        max_speed_mps: args.max_speed,
    };
    let out = process_pings(&pings.pings, &tt, &config);
    std::fs::create_dir_all(&args.out_dir).map_err(data_err)?;
    let progress_path = args.out_dir.join("progress.csv");
    let trips_path = args.out_dir.join("trips.csv");
    write_progress_csv(&progress_path, &out.records).map_err(data_err)?;
    write_trips_csv(&trips_path, &out.trips).map_err(data_err)?;

    let mut m = Manifest::new(
        "preprocess",
        serde_json::to_value(&config).expect("config serializes"),
        None,
    );
    m.add_input(&args.pings).map_err(data_err)?;
    timetable_manifest_inputs(&mut m, &args.timetable_dir)?;
    m.add_output(&progress_path);
    m.add_output(&trips_path);
    m.write(&args.out_dir).map_err(data_err)?;
    println!(
        "matched {} pings ({} skipped rows) into {} records, {} trips ({} unresolved pings, {} off-route chunks)",
        pings.pings.len(),
        pings.skipped,
        out.records.len(),
        out.trips.len(),
        out.unresolved_pings,
        out.off_route_chunks,
    );
    Ok(())
}

fn cmd_build_dataset(args: BuildDatasetArgs) -> Result<(), CliError> {
    let feature_set = FeatureSet::parse(&args.features)
        .ok_or_else(|| CliError::Usage(format!("unknown feature set {:?}", args.features)))?;
    let mut trips = read_trips_csv(&args.trips).map_err(data_err)?;
    if let Some(lines) = &args.lines {
        let keep = parse_lines(lines);
        trips.retain(|t| keep.contains(&t.line));
    }
    if let Some(dates) = &args.dates {
        let keep = parse_dates(dates)?;
        trips.retain(|t| keep.contains(&t.date));
    }

    let timetable = match &args.timetable_dir {
        Some(dir) => Some(load_tt_dir(dir)?),
        None => None,
    };
    let ha_model = match &args.ha_model {
        Some(path) => Some(load_model(path)?),
        None => None,
    };
    let ha_table = match &ha_model {
        Some(model) => match &model.params {
            ModelParams::Ha(table) => Some(table),
            _ => {
                return Err(CliError::Usage(format!(
                    "--ha-model {} is not an HA model",
                    args.ha_model.as_ref().unwrap().display()
                )))
            }
        },
        None => None,
    };
    let segment_aux = match &args.segments_aux {
        Some(path) => Some(SegmentAuxTable::load(path).map_err(data_err)?),
        None => None,
    };
    let weather = match &args.weather {
        Some(path) => Some(WeatherTable::load(path).map_err(data_err)?),
        None => None,
    };
    let progress = match &args.congestion_from {
        Some(path) => Some(read_progress_csv(path).map_err(data_err)?),
        None => None,
    };

    let ctx = FeatureContext {
        timetable: timetable.as_ref(),
        ha: ha_table,
        segment_aux: segment_aux.as_ref(),
        congestion_records: progress.as_deref(),
        weather: weather.as_ref(),
    };
    let built = match args.method.as_str() {
        "hop" => build_hop_dataset(&trips, feature_set, ctx),
        "longdist" => build_longdist_dataset(&trips, feature_set, ctx),
        other => return Err(CliError::Usage(format!("unknown method {other:?}"))),
    }
    .map_err(data_err)?;

    write_dataset_csv(&args.out, &built.samples).map_err(data_err)?;

    let mut m = Manifest::new(
        "build-dataset",
        json!({
            "method": args.method,
            "features": feature_set.to_string(),
            "lines": args.lines,
            "dates": args.dates,
        }),
        None,
    );
    m.add_input(&args.trips).map_err(data_err)?;
    if let Some(dir) = &args.timetable_dir {
        timetable_manifest_inputs(&mut m, dir)?;
    }
    for opt in [&args.ha_model, &args.segments_aux, &args.weather, &args.congestion_from] {
        if let Some(path) = opt {
            m.add_input(path).map_err(data_err)?;
        }
    }
    m.add_output(&args.out);
    m.write(&args.out).map_err(data_err)?;
    println!(
        "built {} samples ({} skipped, {} weekend trips) into {}",
        built.samples.len(),
        built.skipped,
        built.weekend_trips,
        args.out.display()
    );
    Ok(())
}

fn parse_hidden(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad hidden width {t:?}")))
        })
        .collect()
}

fn parse_activations(s: &str) -> Result<Vec<Activation>, CliError> {
    s.split(',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            Activation::parse(t.trim())
                .ok_or_else(|| CliError::Usage(format!("bad activation {t:?} (relu/tanh)")))
        })
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let feature_set = FeatureSet::parse(&args.features)
        .ok_or_else(|| CliError::Usage(format!("unknown feature set {:?}", args.features)))?;
    let kind = ModelKind::parse(&args.model)
        .ok_or_else(|| CliError::Usage(format!("unknown model {:?}", args.model)))?;

    let mut train_dates = args.train_dates.as_deref().map(parse_dates).transpose()?;
    let mut test_dates = args.test_dates.as_deref().map(parse_dates).transpose()?;
    if let Some(target) = args.protocol_test_date {
        if train_dates.is_some() || test_dates.is_some() {
            return Err(CliError::Usage(
                "--protocol-test-date replaces --train-dates/--test-dates".into(),
            ));
        }
        train_dates = Some((1..=3).map(|w| target - chrono::Duration::weeks(w)).collect());
        test_dates = Some(vec![target]);
    }
    if let (Some(train), Some(test)) = (&train_dates, &test_dates) {
        if let Some(overlap) = train.iter().find(|d| test.contains(d)) {
            return Err(CliError::Usage(format!(
                "training and test dates overlap on {overlap}"
            )));
        }
    }

    let mut m = Manifest::new(
        "train",
        json!({
            "model": args.model,
            "features": feature_set.to_string(),
            "hidden": args.hidden,
            "activations": args.activations,
            "lr": args.lr,
            "epochs": args.epochs,
            "batch": args.batch,
            "centers": args.centers,
            "rbf_tune": args.rbf_tune,
            "train_dates": args.train_dates,
            "test_dates": args.test_dates,
            "protocol_test_date": args.protocol_test_date,
            "line": args.line,
        }),
        Some(args.seed),
    );

    let model = match kind {
        ModelKind::Timetable => {
            let dir = args.timetable_dir.as_ref().ok_or_else(|| {
                CliError::Usage("--model timetable requires --timetable-dir".into())
            })?;
            let line = args.line.as_ref().ok_or_else(|| {
                CliError::Usage("--model timetable requires --line".into())
            })?;
            let tt = load_tt_dir(dir)?;
            timetable_manifest_inputs(&mut m, dir)?;
            TrainedModel {
                kind: ModelKind::Timetable,
                feature_set,
                scaler: None,
                label_scaler: None,
                params: ModelParams::Timetable(tt.schedule.restrict_to_line(line)),
                meta: TrainingMeta {
                    lines: vec![line.clone()],
                    dates: Vec::new(),
                    seed: args.seed,
                    final_loss: None,
                },
                line: Some(line.clone()),
                fallback_schedule: None,
            }
        }
        ModelKind::Ha => {
            return Err(CliError::Usage(
                "historical-average models are built with `build-ha`".into(),
            ))
        }
        ModelKind::Mlp | ModelKind::Rbfn => {
            let dataset = args
                .dataset
                .as_ref()
                .ok_or_else(|| CliError::Usage("--dataset is required".into()))?;
            let mut samples = read_dataset_csv(dataset).map_err(data_err)?;
            m.add_input(dataset).map_err(data_err)?;
            if let Some(line) = &args.line {
                samples.retain(|s| &s.meta.line == line);
            }
            if let Some(train) = &train_dates {
                samples.retain(|s| train.contains(&s.meta.date));
            }
            if let Some(test) = &test_dates {
                samples.retain(|s| !test.contains(&s.meta.date));
            }
            if samples.is_empty() {
                return Err(CliError::Data("no training samples after filtering".into()));
            }

            let mut model = match kind {
                ModelKind::Mlp => {
                    let config = MlpConfig {
                        hidden_layers: parse_hidden(&args.hidden)?,
                        activations: parse_activations(&args.activations)?,
                        learning_rate: args.lr,
                        epochs: args.epochs,
                        batch_size: args.batch,
                        momentum: 0.9,
                        seed: args.seed,
                    };
                    transit_eta_core::models::train_mlp(&config, &samples, feature_set)?
                }
                _ => {
                    let training = match &args.rbf_tune {
                        Some(spec) => {
                            let (epochs, lr) = spec.split_once(':').ok_or_else(|| {
                                CliError::Usage("--rbf-tune expects EPOCHS:LR".into())
                            })?;
                            RbfnTraining::Gradient {
                                epochs: epochs
                                    .parse()
                                    .map_err(|_| CliError::Usage("bad --rbf-tune epochs".into()))?,
                                learning_rate: lr
                                    .parse()
                                    .map_err(|_| CliError::Usage("bad --rbf-tune lr".into()))?,
                            }
                        }
                        None => RbfnTraining::LeastSquares,
                    };
                    let config = RbfnConfig {
                        centers: args.centers,
                        seed: args.seed,
                        training,
                        ..RbfnConfig::default()
                    };
                    transit_eta_core::models::train_rbfn(&config, &samples, feature_set)?
                }
            };
            if let Some(line) = &args.line {
                model.line = Some(line.clone());
            } else if model.meta.lines.len() == 1 {
                model.line = Some(model.meta.lines[0].clone());
            }
            model
        }
    };

    save_model(&model, &args.out)?;
    m.add_output(&args.out);
    m.write(&args.out).map_err(data_err)?;
    match model.meta.final_loss {
        Some(loss) => println!(
            "trained {} ({} lines, {} dates), final loss {loss:.6}; saved {}",
            model.id(),
            model.meta.lines.len(),
            model.meta.dates.len(),
            args.out.display()
        ),
        None => println!("packaged {}; saved {}", model.id(), args.out.display()),
    }
    Ok(())
}

fn cmd_build_ha(args: BuildHaArgs) -> Result<(), CliError> {
    let selector = DaySelector::parse(&args.selector)
        .ok_or_else(|| CliError::Usage(format!("unknown selector {:?}", args.selector)))?;
    let mut trips = read_trips_csv(&args.trips).map_err(data_err)?;
    if let Some(line) = &args.line {
        trips.retain(|t| &t.line == line);
    }
    if let Some(dates) = &args.dates {
        let keep = parse_dates(dates)?;
        trips.retain(|t| keep.contains(&t.date));
    }
    let table = build_ha(&trips, selector);

    let fallback = match &args.timetable_dir {
        Some(dir) => {
            let tt = load_tt_dir(dir)?;
            Some(match &args.line {
                Some(line) => tt.schedule.restrict_to_line(line),
                None => tt.schedule,
            })
        }
        None => None,
    };

    let mut lines: Vec<String> = trips.iter().map(|t| t.line.clone()).collect();
    lines.sort();
    lines.dedup();
    let mut dates: Vec<NaiveDate> = trips.iter().map(|t| t.date).collect();
    dates.sort();
    dates.dedup();

    let populated = table.populated_cells();
    let model = TrainedModel {
        kind: ModelKind::Ha,
        feature_set: FeatureSet::HistAvg,
        scaler: None,
        label_scaler: None,
        params: ModelParams::Ha(table),
        meta: TrainingMeta {
            lines: lines.clone(),
            dates,
            seed: 0,
            final_loss: None,
        },
        line: args.line.clone().or(if lines.len() == 1 {
            Some(lines[0].clone())
        } else {
            None
        }),
        fallback_schedule: fallback,
    };
    save_model(&model, &args.out)?;

    let mut m = Manifest::new(
        "build-ha",
        json!({
            "selector": args.selector,
            "line": args.line,
            "dates": args.dates,
        }),
        None,
    );
    m.add_input(&args.trips).map_err(data_err)?;
    if let Some(dir) = &args.timetable_dir {
        timetable_manifest_inputs(&mut m, dir)?;
    }
    m.add_output(&args.out);
    m.write(&args.out).map_err(data_err)?;
    println!(
        "built HA table with {populated} populated cells from {} trips; saved {}",
        trips.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Deserialize)]
struct QueryDoc {
    features: FeatureVector,
    meta: SampleMeta,
    #[serde(default)]
    label: Option<f64>,
}

fn load_registry(dir: &Path) -> Result<ModelRegistry, CliError> {
    let mut registry = ModelRegistry::default();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(data_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name != "manifest.json" && !name.ends_with(".manifest.json")
        })
        .collect();
    entries.sort();
    for path in entries {
        let model = load_model(&path)?;
        let line = model
            .line
            .clone()
            .or_else(|| model.meta.lines.first().cloned())
            .ok_or_else(|| {
                CliError::Data(format!("{}: model has no line attribution", path.display()))
            })?;
        registry.insert(&line, model);
    }
    Ok(registry)
}

fn load_groups(path: Option<&PathBuf>) -> Result<GroupTable, CliError> {
    let mut groups = GroupTable::builtin();
    if let Some(p) = path {
        groups.load_extra(p).map_err(data_err)?;
    }
    Ok(groups)
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let doc: QueryDoc = serde_json::from_str(
        &std::fs::read_to_string(&args.query).map_err(data_err)?,
    )
    .map_err(|e| CliError::Data(format!("bad query: {e}")))?;
    let sample = TravelSample {
        features: doc.features,
        label: doc.label.unwrap_or(1.0),
        meta: doc.meta,
    };

    if args.hybrid {
        let dir = args
            .registry_dir
            .as_ref()
            .ok_or_else(|| CliError::Usage("--hybrid requires --registry-dir".into()))?;
        let registry = load_registry(dir)?;
        let mut table = DispatchTable::default();
        if let Some(path) = &args.dispatch {
            table.load_overrides(path).map_err(data_err)?;
        }
        let groups = load_groups(args.groups.as_ref())?;
        let got = transit_eta_core::hybrid::hybrid_predict(&registry, &table, &groups, &sample)
            .map_err(data_err)?;
        println!("{:.1} s (model {})", got.seconds, got.model_id);
        return Ok(());
    }

    let path = args
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("--model or --hybrid is required".into()))?;
    let model = load_model(path)?;
    let seconds = match args.recursive {
        Some(k) => {
            let route_len = args
                .route_len
                .ok_or_else(|| CliError::Usage("--recursive requires --route-len".into()))?;
            predict_recursive(&model, &sample, k, route_len)?
        }
        None => predict_longdist(&model, &sample)?,
    };
    println!("{seconds:.1} s (model {})", model.id());
    Ok(())
}

fn route_lengths_of(tt: &Timetable) -> BTreeMap<String, u32> {
    let mut lengths = BTreeMap::new();
    for ((line, _), pattern) in &tt.patterns {
        let n = pattern.len();
        lengths
            .entry(line.clone())
            .and_modify(|v: &mut u32| *v = (*v).max(n))
            .or_insert(n);
    }
    lengths
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let mut spec = EvalSpec::parse_preset(&args.spec)
        .ok_or_else(|| CliError::Usage(format!("unknown eval spec {:?}", args.spec)))?;
    spec.std_mode = match args.std_mode.as_str() {
        "absolute" => transit_eta_core::eval::StdMode::AbsoluteErrors,
        "signed" => transit_eta_core::eval::StdMode::SignedErrors,
        other => return Err(CliError::Usage(format!("unknown std mode {other:?}"))),
    };
    if let Some(dir) = &args.timetable_dir {
        spec.route_lengths = route_lengths_of(&load_tt_dir(dir)?);
    }
    let mut samples = read_dataset_csv(&args.dataset).map_err(data_err)?;
    if let Some(lines) = &args.lines {
        let keep = parse_lines(lines);
        samples.retain(|s| keep.contains(&s.meta.line));
    }
    if let Some(dates) = &args.dates {
        let keep = parse_dates(dates)?;
        samples.retain(|s| keep.contains(&s.meta.date));
    }

    let mut m = Manifest::new(
        "evaluate",
        json!({
            "spec": args.spec,
            "model_id": args.model_id,
            "hybrid": args.hybrid,
            "lines": args.lines,
            "dates": args.dates,
        }),
        None,
    );
    m.add_input(&args.dataset).map_err(data_err)?;

    let mut report = if args.hybrid {
        let dir = args
            .registry_dir
            .as_ref()
            .ok_or_else(|| CliError::Usage("--hybrid requires --registry-dir".into()))?;
        let registry = load_registry(dir)?;
        let mut table = DispatchTable::default();
        if let Some(path) = &args.dispatch {
            table.load_overrides(path).map_err(data_err)?;
            m.add_input(path).map_err(data_err)?;
        }
        let groups = load_groups(args.groups.as_ref())?;
        let hybrid = HybridModel {
            registry: &registry,
            table,
            groups,
        };
        eval::evaluate(&hybrid, &samples, &spec)
    } else {
        let path = args
            .model
            .as_ref()
            .ok_or_else(|| CliError::Usage("--model or --hybrid is required".into()))?;
        let model = load_model(path)?;
        m.add_input(path).map_err(data_err)?;
        eval::evaluate(&model, &samples, &spec)
    };
    if let Some(id) = &args.model_id {
        report.model_id = id.clone();
    }

    std::fs::create_dir_all(&args.out_dir).map_err(data_err)?;
    let report_csv = args.out_dir.join("report.csv");
    let curve_csv = args.out_dir.join("curve.csv");
    let report_json = args.out_dir.join("report.json");
    eval::write_report_csv(&report_csv, &report).map_err(data_err)?;
    eval::write_curve_csv(&curve_csv, &report).map_err(data_err)?;
    eval::write_report_json(&report_json, &report).map_err(data_err)?;
    for p in [&report_csv, &curve_csv, &report_json] {
        m.add_output(p);
    }
    m.write(&args.out_dir).map_err(data_err)?;

    println!(
        "evaluated {} over {} samples: {} cells, {} failures, {} out of scope",
        report.model_id,
        samples.len(),
        report.cells.len(),
        report.prediction_failures,
        report.out_of_scope
    );
    for ((band, bucket), stat) in &report.cells {
        println!(
            "  band {band:>6}  bucket {bucket:>6}  MAE {:>8.2}s  STD {:>8.2}s  n {}",
            stat.mae_s, stat.std_s, stat.n
        );
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let paths: Vec<PathBuf> = args
        .reports
        .split(',')
        .filter(|t| !t.is_empty())
        .map(PathBuf::from)
        .collect();
    if paths.len() < 2 {
        return Err(CliError::Usage("--reports needs at least two paths".into()));
    }
    let reports: Vec<_> = paths
        .iter()
        .map(|p| eval::read_report_json(p).map_err(data_err))
        .collect::<Result<_, _>>()?;
    let comparison = eval::compare(&reports).map_err(data_err)?;

    std::fs::create_dir_all(&args.out_dir).map_err(data_err)?;
    let out = args.out_dir.join("comparison.csv");
    eval::write_comparison_csv(&out, &comparison).map_err(data_err)?;

    let mut m = Manifest::new("compare", json!({ "reports": args.reports }), None);
    for p in &paths {
        m.add_input(p).map_err(data_err)?;
    }
    m.add_output(&out);
    m.write(&args.out_dir).map_err(data_err)?;

    for ((band, bucket), cell) in &comparison.cells {
        let maes: Vec<String> = cell
            .mae_by_model
            .iter()
            .map(|(model, mae)| format!("{model} {mae:.2}s"))
            .collect();
        println!(
            "band {band:>6} bucket {bucket:>6}: {} -> best {}",
            maes.join(", "),
            cell.best_model
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_dispatch_check(args: DispatchCheckArgs) -> Result<(), CliError> {
    let builtin = DispatchTable::default();
    let mut table = builtin.clone();
    if let Some(path) = &args.dispatch {
        table.load_overrides(path).map_err(data_err)?;
    }

    println!("{:<38} {:>6} {:>6} {:>10}", "group", "band", "model", "features");
    let mut diffs = 0;
    for ((group_id, band), (kind, set)) in table.iter() {
        let group = LineGroup::from_group_id(*group_id).map_err(data_err)?;
        let marker = if builtin.get(group, *band) != (*kind, *set) {
            diffs += 1;
            " (override)"
        } else {
            ""
        };
        println!(
            "{:<38} {:>6} {:>6} {:>10}{marker}",
            group.name(),
            band.to_string(),
            kind.to_string(),
            set.to_string()
        );
    }
    if table.len() != 24 {
        return Err(CliError::Data(format!(
            "dispatch table has {} cells, expected 24",
            table.len()
        )));
    }
    // Sanity probes against the expected defaults.
    let groups = GroupTable::builtin();
    let checks: [(&str, u32, ModelKind, FeatureSet); 3] = [
        ("111", 3, ModelKind::Rbfn, FeatureSet::Timetable),
        ("172", 10, ModelKind::Rbfn, FeatureSet::HistAvg),
        ("158", 20, ModelKind::Mlp, FeatureSet::HistAvg),
    ];
    for (line, distance, kind, set) in checks {
        let got = dispatch(&builtin, &groups, line, distance).map_err(data_err)?;
        if got != (kind, set) {
            return Err(CliError::Data(format!(
                "built-in dispatch for line {line} at {distance} stops is {got:?}, expected ({kind}, {set})"
            )));
        }
    }
    println!(
        "24 cells verified{}",
        if diffs > 0 {
            format!(", {diffs} overridden")
        } else {
            String::new()
        }
    );
    Ok(())
}
