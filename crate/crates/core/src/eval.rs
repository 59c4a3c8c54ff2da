//! MAE/STD evaluation stratified by distance band and time-of-day bucket,
//! plus per-distance curves with route-end markers and cross-model
//! comparison reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::TravelSample;
use crate::models::Predictor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("reports cover different test sets: {0}")]
    MismatchedTestSets(String),
    #[error("need at least 2 reports to compare, got {0}")]
    TooFewReports(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Inclusive stop-count range, e.g. 1-3.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Band {
    pub lo: u32,
    pub hi: u32,
}

impl Band {
    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }

    pub fn contains(&self, distance: u32) -> bool {
        (self.lo..=self.hi).contains(&distance)
    }
}

/// Hour-of-day range [start, end).
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bucket {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl Bucket {
    pub fn label(&self) -> String {
        format!("{}-{}", self.start_hour, self.end_hour)
    }

    pub fn contains(&self, seconds_of_day: f64) -> bool {
        let h = seconds_of_day / 3600.0;
        h >= self.start_hour as f64 && h < self.end_hour as f64
    }
}

/// What the reported standard deviation is taken over.
#[derive(Debug, Copy, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum StdMode {
    /// Population standard deviation of the absolute errors.
    #[default]
    AbsoluteErrors,
    /// Population standard deviation of the signed errors.
    SignedErrors,
}

/// Evaluation stratification: time buckets, distance bands and (optionally)
/// per-line route lengths for curve end markers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSpec {
    pub buckets: Vec<Bucket>,
    pub bands: Vec<Band>,
    /// line -> stop count; a distance d gets a route-end marker when some
    /// line's longest possible prediction is exactly d stops.
    pub route_lengths: BTreeMap<String, u32>,
    #[serde(default)]
    pub std_mode: StdMode,
}

impl EvalSpec {
    /// Band preset used by the per-band result tables: distances
    /// 1-3/4-8/9-15/16-20/21-27, buckets 7-10/10-14/14-19/19-23.
    pub fn tables() -> Self {
        Self {
            buckets: Self::default_buckets(),
            bands: vec![
                Band { lo: 1, hi: 3 },
                Band { lo: 4, hi: 8 },
                Band { lo: 9, hi: 15 },
                Band { lo: 16, hi: 20 },
                Band { lo: 21, hi: 27 },
            ],
            route_lengths: BTreeMap::new(),
            std_mode: StdMode::default(),
        }
    }

    /// Band preset used by the per-distance figures: 1-5/6-15/16-25.
    pub fn figures() -> Self {
        Self {
            buckets: Self::default_buckets(),
            bands: vec![
                Band { lo: 1, hi: 5 },
                Band { lo: 6, hi: 15 },
                Band { lo: 16, hi: 25 },
            ],
            route_lengths: BTreeMap::new(),
            std_mode: StdMode::default(),
        }
    }

    pub fn default_buckets() -> Vec<Bucket> {
        vec![
            Bucket { start_hour: 7, end_hour: 10 },
            Bucket { start_hour: 10, end_hour: 14 },
            Bucket { start_hour: 14, end_hour: 19 },
            Bucket { start_hour: 19, end_hour: 23 },
        ]
    }

    /// Morning and afternoon rush hours.
    pub fn rush_buckets() -> Vec<Bucket> {
        vec![
            Bucket { start_hour: 7, end_hour: 10 },
            Bucket { start_hour: 15, end_hour: 19 },
        ]
    }

    pub fn parse_preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "tables" => Some(Self::tables()),
            "figures" => Some(Self::figures()),
            "rush" => Some(Self {
                buckets: Self::rush_buckets(),
                ..Self::figures()
            }),
            _ => None,
        }
    }

    fn band_of(&self, distance: u32) -> Option<Band> {
        self.bands.iter().copied().find(|b| b.contains(distance))
    }

    fn bucket_of(&self, depart_s: f64) -> Option<Bucket> {
        self.buckets.iter().copied().find(|b| b.contains(depart_s))
    }
}

/// MAE and population standard deviation of the absolute errors.
pub fn mae_std(pairs: &[(f64, f64)]) -> Result<(f64, f64), EvalError> {
    mae_std_mode(pairs, StdMode::AbsoluteErrors)
}

/// MAE plus the standard deviation under the chosen [`StdMode`].
pub fn mae_std_mode(pairs: &[(f64, f64)], mode: StdMode) -> Result<(f64, f64), EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let signed: Vec<f64> = pairs.iter().map(|(p, a)| p - a).collect();
    Ok(mae_std_of_signed(&signed, mode))
}

fn mae_std_of_signed(signed: &[f64], mode: StdMode) -> (f64, f64) {
    let n = signed.len() as f64;
    let mae = signed.iter().map(|e| e.abs()).sum::<f64>() / n;
    let spread = match mode {
        StdMode::AbsoluteErrors => {
            signed.iter().map(|e| (e.abs() - mae) * (e.abs() - mae)).sum::<f64>() / n
        }
        StdMode::SignedErrors => {
            let mean = signed.iter().sum::<f64>() / n;
            signed.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n
        }
    };
    (mae, spread.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mae_s: f64,
    pub std_s: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mae_s: f64,
    pub n: usize,
    /// Some line's route ends exactly at this distance.
    pub route_end: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReportCellEntry {
    band: String,
    bucket: String,
    #[serde(flatten)]
    stat: CellStat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalReportRepr {
    model_id: String,
    cells: Vec<ReportCellEntry>,
    curve: BTreeMap<u32, CurvePoint>,
    prediction_failures: usize,
    out_of_scope: usize,
}

/// Per-model evaluation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "EvalReportRepr", into = "EvalReportRepr")]
pub struct EvalReport {
    pub model_id: String,
    /// (band label, bucket label) -> stats; empty cells are absent.
    pub cells: BTreeMap<(String, String), CellStat>,
    /// Exact stop distance -> MAE over all in-bucket samples.
    pub curve: BTreeMap<u32, CurvePoint>,
    /// Samples the model could not score (for example an HA cell with no
    /// data anywhere and no fallback).
    pub prediction_failures: usize,
    /// Samples outside every bucket or band.
    pub out_of_scope: usize,
}

impl From<EvalReportRepr> for EvalReport {
    fn from(repr: EvalReportRepr) -> Self {
        Self {
            model_id: repr.model_id,
            cells: repr
                .cells
                .into_iter()
                .map(|e| ((e.band, e.bucket), e.stat))
                .collect(),
            curve: repr.curve,
            prediction_failures: repr.prediction_failures,
            out_of_scope: repr.out_of_scope,
        }
    }
}

impl From<EvalReport> for EvalReportRepr {
    fn from(report: EvalReport) -> Self {
        Self {
            model_id: report.model_id,
            cells: report
                .cells
                .into_iter()
                .map(|((band, bucket), stat)| ReportCellEntry { band, bucket, stat })
                .collect(),
            curve: report.curve,
            prediction_failures: report.prediction_failures,
            out_of_scope: report.out_of_scope,
        }
    }
}

/// Evaluate one predictor over labeled samples: group absolute errors by
/// (distance band, departure bucket), and by exact distance for the curve.
/// Deterministic and independent of sample order.
pub fn evaluate(
    predictor: &dyn Predictor,
    samples: &[TravelSample],
    spec: &EvalSpec,
) -> EvalReport {
    let mut cell_errors: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut curve_errors: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut failures = 0usize;
    let mut out_of_scope = 0usize;

    for sample in samples {
        let distance = sample.meta.dest_idx.saturating_sub(sample.meta.origin_idx);
        let (Some(band), Some(bucket)) = (
            spec.band_of(distance),
            spec.bucket_of(sample.meta.depart_s),
        ) else {
            out_of_scope += 1;
            continue;
        };
        let Ok(pred) = predictor.predict(sample) else {
            failures += 1;
            continue;
        };
        let err = pred - sample.label;
        cell_errors
            .entry((band.label(), bucket.label()))
            .or_default()
            .push(err);
        curve_errors.entry(distance).or_default().push(err);
    }

    // Sort error lists so aggregation does not depend on input order.
    let cells = cell_errors
        .into_iter()
        .map(|(key, mut errs)| {
            errs.sort_by(f64::total_cmp);
            let (mae_s, std_s) = mae_std_of_signed(&errs, spec.std_mode);
            (key, CellStat { mae_s, std_s, n: errs.len() })
        })
        .collect();
    let curve = curve_errors
        .into_iter()
        .map(|(distance, mut errs)| {
            errs.sort_by(f64::total_cmp);
            let (mae_s, _) = mae_std_of_signed(&errs, spec.std_mode);
            let route_end = spec
                .route_lengths
                .values()
                .any(|&stops| stops.saturating_sub(1) == distance);
            (distance, CurvePoint { mae_s, n: errs.len(), route_end })
        })
        .collect();

    EvalReport {
        model_id: predictor.id(),
        cells,
        curve,
        prediction_failures: failures,
        out_of_scope,
    }
}

/// Cross-model comparison over reports from the same test set.
#[derive(Debug, Clone)]
pub struct Comparison {
    /// (band, bucket) -> per-model MAE plus the winner.
    pub cells: BTreeMap<(String, String), ComparisonCell>,
    /// distance -> (model -> MAE), with route-end markers.
    pub curve: BTreeMap<u32, ComparisonPoint>,
}

#[derive(Debug, Clone)]
pub struct ComparisonCell {
    pub mae_by_model: BTreeMap<String, f64>,
    pub best_model: String,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct ComparisonPoint {
    pub mae_by_model: BTreeMap<String, f64>,
    pub n: usize,
    pub route_end: bool,
}

/// Compare two or more reports cell by cell and distance by distance.
/// All reports must cover the same cells with the same sample counts.
pub fn compare(reports: &[EvalReport]) -> Result<Comparison, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let first = &reports[0];
    for other in &reports[1..] {
        let same_cells = first.cells.len() == other.cells.len()
            && first
                .cells
                .iter()
                .all(|(k, v)| other.cells.get(k).map(|o| o.n == v.n).unwrap_or(false));
        let same_curve = first.curve.len() == other.curve.len()
            && first
                .curve
                .iter()
                .all(|(k, v)| other.curve.get(k).map(|o| o.n == v.n).unwrap_or(false));
        if !same_cells || !same_curve {
            return Err(EvalError::MismatchedTestSets(format!(
                "{} vs {}",
                first.model_id, other.model_id
            )));
        }
    }

    let mut cells = BTreeMap::new();
    for (key, stat) in &first.cells {
        let mut mae_by_model = BTreeMap::new();
        for r in reports {
            mae_by_model.insert(r.model_id.clone(), r.cells[key].mae_s);
        }
        let best_model = mae_by_model
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
            .map(|(m, _)| m.clone())
            .expect("at least two models");
        cells.insert(
            key.clone(),
            ComparisonCell {
                mae_by_model,
                best_model,
                n: stat.n,
            },
        );
    }

    let mut curve = BTreeMap::new();
    for (&distance, point) in &first.curve {
        let mut mae_by_model = BTreeMap::new();
        for r in reports {
            mae_by_model.insert(r.model_id.clone(), r.curve[&distance].mae_s);
        }
        curve.insert(
            distance,
            ComparisonPoint {
                mae_by_model,
                n: point.n,
                route_end: point.route_end,
            },
        );
    }
    Ok(Comparison { cells, curve })
}

pub const REPORT_CSV_HEADER: &str = "model,band,bucket,mae_s,std_s,n";
pub const CURVE_CSV_HEADER: &str = "model,distance_stops,mae_s,n,route_end_marker";

fn write_file(path: &Path, content: &str) -> Result<(), EvalError> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(content.as_bytes()))
        .map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// `report.csv`: one row per populated (band, bucket) cell.
pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let mut buf = String::from(REPORT_CSV_HEADER);
    buf.push('\n');
    for ((band, bucket), stat) in &report.cells {
        buf.push_str(&format!(
            "{},{},{},{:.3},{:.3},{}\n",
            report.model_id, band, bucket, stat.mae_s, stat.std_s, stat.n
        ));
    }
    write_file(path, &buf)
}

/// `curve.csv`: MAE against exact stop distance.
pub fn write_curve_csv(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let mut buf = String::from(CURVE_CSV_HEADER);
    buf.push('\n');
    for (distance, point) in &report.curve {
        buf.push_str(&format!(
            "{},{},{:.3},{},{}\n",
            report.model_id,
            distance,
            point.mae_s,
            point.n,
            if point.route_end { 1 } else { 0 }
        ));
    }
    write_file(path, &buf)
}

/// Comparison document: per-cell MAE of every model and the winner, then
/// the per-distance plot data.
pub fn write_comparison_csv(path: &Path, comparison: &Comparison) -> Result<(), EvalError> {
    let mut buf =
        String::from("section,band,bucket,distance_stops,model,mae_s,n,best,route_end_marker\n");
    for ((band, bucket), cell) in &comparison.cells {
        for (model, mae) in &cell.mae_by_model {
            buf.push_str(&format!(
                "cell,{band},{bucket},,{model},{mae:.3},{},{},\n",
                cell.n,
                if model == &cell.best_model { 1 } else { 0 }
            ));
        }
    }
    for (distance, point) in &comparison.curve {
        for (model, mae) in &point.mae_by_model {
            buf.push_str(&format!(
                "curve,,,{distance},{model},{mae:.3},{},,{}\n",
                point.n,
                if point.route_end { 1 } else { 0 }
            ));
        }
    }
    write_file(path, &buf)
}

/// Serialize a report as JSON (the lossless interchange format `compare`
/// reads back).
pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(path, &json)
}

pub fn read_report_json(path: &Path) -> Result<EvalReport, EvalError> {
    let data = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&data).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::test_support::{basic_query, constant_hop_model};
    use crate::features::TravelSample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_give_zero_mae_and_std() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64)).collect();
        assert_eq!(mae_std(&pairs).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn two_point_arithmetic() {
        // |errors| = {10, 20} -> MAE 15, STD 5.
        let pairs = vec![(110.0, 100.0), (80.0, 100.0)];
        let (mae, std) = mae_std(&pairs).unwrap();
        assert_eq!(mae, 15.0);
        assert_eq!(std, 5.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(mae_std(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn signed_std_mode_differs_from_absolute() {
        // Errors +10 and -10: identical magnitudes (abs STD 0), full spread
        // under the signed definition.
        let pairs = vec![(110.0, 100.0), (90.0, 100.0)];
        let (mae_abs, std_abs) = mae_std_mode(&pairs, StdMode::AbsoluteErrors).unwrap();
        let (mae_sgn, std_sgn) = mae_std_mode(&pairs, StdMode::SignedErrors).unwrap();
        assert_eq!(mae_abs, 10.0);
        assert_eq!(mae_sgn, 10.0);
        assert_eq!(std_abs, 0.0);
        assert_eq!(std_sgn, 10.0);
    }

    #[test]
    fn matches_independent_recomputation_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pairs: Vec<(f64, f64)> = (0..1000)
            .map(|_| (rng.gen_range(0.0..600.0), rng.gen_range(0.0..600.0)))
            .collect();
        let (mae, std) = mae_std(&pairs).unwrap();

        // Independent recomputation, same arithmetic order.
        let abs: Vec<f64> = pairs.iter().map(|(p, a)| (p - a).abs()).collect();
        let expect_mae = abs.iter().sum::<f64>() / abs.len() as f64;
        let expect_std = (abs
            .iter()
            .map(|e| (e - expect_mae) * (e - expect_mae))
            .sum::<f64>()
            / abs.len() as f64)
            .sqrt();
        assert_eq!(mae, expect_mae);
        assert_eq!(std, expect_std);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.gen_range(0.0..600.0), rng.gen_range(0.0..600.0)))
            .collect();
        let (mae, std) = mae_std(&pairs).unwrap();
        for _ in 0..100 {
            let c: f64 = rng.gen_range(0.001..1000.0);
            let scaled: Vec<(f64, f64)> = pairs.iter().map(|(p, a)| (c * p, c * a)).collect();
            let (mae_c, std_c) = mae_std(&scaled).unwrap();
            assert!((mae_c - c * mae).abs() <= 1e-12 * (c * mae).abs().max(1e-300));
            assert!((std_c - c * std).abs() <= 1e-12 * (c * std).abs().max(1e-300));
        }
    }

    fn sample_at(origin: u32, dest: u32, hour: f64, label: f64) -> TravelSample {
        let mut s = basic_query(origin, dest, hour * 3600.0);
        s.label = label;
        s
    }

    #[test]
    fn evaluate_places_sample_in_its_cell() {
        let model = constant_hop_model(100.0);
        // distance 2 (band 1-3), 08:00 (bucket 7-10), |100 - 41.76| = 58.24
        let samples = vec![sample_at(3, 5, 8.0, 41.76)];
        let report = evaluate(&model, &samples, &EvalSpec::tables());
        assert_eq!(report.cells.len(), 1);
        let stat = &report.cells[&("1-3".to_string(), "7-10".to_string())];
        assert!((stat.mae_s - 58.24).abs() < 1e-9);
        assert_eq!(stat.n, 1);
    }

    #[test]
    fn samples_outside_buckets_are_omitted() {
        let model = constant_hop_model(100.0);
        let samples = vec![sample_at(1, 3, 2.0, 100.0)]; // 02:00, outside all buckets
        let report = evaluate(&model, &samples, &EvalSpec::tables());
        assert!(report.cells.is_empty());
        assert_eq!(report.out_of_scope, 1);
    }

    #[test]
    fn perfect_oracle_gives_zero_cells() {
        let model = constant_hop_model(300.0);
        let samples: Vec<TravelSample> = (1..5)
            .map(|d| sample_at(1, 1 + d, 8.0 + d as f64, 300.0))
            .collect();
        let report = evaluate(&model, &samples, &EvalSpec::tables());
        for stat in report.cells.values() {
            assert_eq!(stat.mae_s, 0.0);
            assert_eq!(stat.std_s, 0.0);
        }
        let total: usize = report.cells.values().map(|s| s.n).sum();
        assert_eq!(total, samples.len());
    }

    #[test]
    fn evaluate_is_input_order_independent() {
        let model = constant_hop_model(100.0);
        let mut samples: Vec<TravelSample> = (0..50)
            .map(|i| sample_at(1, 2 + (i % 6), 8.0, 60.0 + i as f64))
            .collect();
        let fwd = evaluate(&model, &samples, &EvalSpec::tables());
        samples.reverse();
        let rev = evaluate(&model, &samples, &EvalSpec::tables());
        assert_eq!(fwd.cells, rev.cells);
        assert_eq!(fwd.curve, rev.curve);
    }

    #[test]
    fn curve_marks_route_ends() {
        let model = constant_hop_model(100.0);
        let samples = vec![
            sample_at(1, 5, 8.0, 400.0),  // distance 4
            sample_at(1, 10, 8.0, 900.0), // distance 9
        ];
        let mut spec = EvalSpec::tables();
        spec.route_lengths.insert("T".into(), 10); // route end marker at distance 9
        let report = evaluate(&model, &samples, &spec);
        assert!(!report.curve[&4].route_end);
        assert!(report.curve[&9].route_end);
    }

    #[test]
    fn compare_identical_reports_has_no_winner_gap() {
        let model = constant_hop_model(100.0);
        let samples: Vec<TravelSample> =
            (0..20).map(|i| sample_at(1, 3, 8.0, 50.0 + i as f64)).collect();
        let r1 = evaluate(&model, &samples, &EvalSpec::tables());
        let mut r2 = r1.clone();
        r2.model_id = "other".into();
        let cmp = compare(&[r1.clone(), r2]).unwrap();
        for cell in cmp.cells.values() {
            let maes: Vec<f64> = cell.mae_by_model.values().copied().collect();
            assert_eq!(maes[0], maes[1]);
        }
    }

    #[test]
    fn compare_flags_dominating_model() {
        let a = constant_hop_model(150.0); // always 50 off
        let b = constant_hop_model(170.0); // always 70 off
        let samples: Vec<TravelSample> = (0..10)
            .map(|i| sample_at(1, 2 + i % 3, 8.0, 100.0))
            .collect();
        let mut ra = evaluate(&a, &samples, &EvalSpec::tables());
        ra.model_id = "A".into();
        let mut rb = evaluate(&b, &samples, &EvalSpec::tables());
        rb.model_id = "B".into();
        let cmp = compare(&[ra, rb]).unwrap();
        for cell in cmp.cells.values() {
            assert_eq!(cell.best_model, "A");
        }
        for point in cmp.curve.values() {
            assert!(point.mae_by_model["A"] < point.mae_by_model["B"]);
        }
    }

    #[test]
    fn compare_rejects_mismatched_test_sets() {
        let model = constant_hop_model(100.0);
        let s1: Vec<TravelSample> = (0..10).map(|_| sample_at(1, 3, 8.0, 100.0)).collect();
        let s2: Vec<TravelSample> = (0..11).map(|_| sample_at(1, 3, 8.0, 100.0)).collect();
        let r1 = evaluate(&model, &s1, &EvalSpec::tables());
        let mut r2 = evaluate(&model, &s2, &EvalSpec::tables());
        r2.model_id = "other".into();
        assert!(matches!(
            compare(&[r1, r2]),
            Err(EvalError::MismatchedTestSets(_))
        ));
    }

    #[test]
    fn report_files_round_trip() {
        let model = constant_hop_model(100.0);
        let samples: Vec<TravelSample> =
            (0..10).map(|i| sample_at(1, 3, 8.0, 60.0 + i as f64)).collect();
        let report = evaluate(&model, &samples, &EvalSpec::tables());
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("report.json");
        write_report_json(&json, &report).unwrap();
        let back = read_report_json(&json).unwrap();
        assert_eq!(back.cells, report.cells);
        write_report_csv(&dir.path().join("report.csv"), &report).unwrap();
        write_curve_csv(&dir.path().join("curve.csv"), &report).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert!(csv.starts_with(REPORT_CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + report.cells.len());
    }
}
