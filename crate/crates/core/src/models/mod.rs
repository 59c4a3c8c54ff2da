//! The four predictors — MLP, RBFN, historical averages and the timetable
//! baseline — plus feature scaling, the recursive/long-distance prediction
//! strategies, and self-describing model files.

mod ha;
mod mlp;
mod rbfn;
mod scaler;

pub use ha::{build_ha, ha_predict, DayKey, DaySelector, HaPrediction, HaTable};
pub use mlp::{train_mlp, Activation, MlpConfig, MlpNet};
pub use rbfn::{train_rbfn, RbfnConfig, RbfnNet, RbfnTraining};
pub use scaler::{apply_scaler, fit_scaler, Scaler};

use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureSet, FeatureVector, TravelSample};
use crate::timetable::{schedule_eta, Direction, Schedule, TimetableError};

/// Format tag of serialized model files.
pub const MODEL_FORMAT: &str = "transit-eta-model/1";

/// Every prediction is floored at this value.
pub const MIN_PREDICTION_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("k-means produced an empty cluster even after re-seeding")]
    DegenerateCluster,
    #[error("feature layout mismatch for {set:?}: missing {missing}")]
    LayoutMismatch { set: FeatureSet, missing: &'static str },
    #[error("prediction overruns the route: hop {hop} needs stop {needed} of {route_len}")]
    BeyondRoute { hop: usize, needed: u32, route_len: u32 },
    #[error("no historical data anywhere for the query and no schedule fallback")]
    NoDataAnywhere,
    #[error("schedule lookup failed: {0}")]
    Schedule(#[from] TimetableError),
    #[error("model file {path}: {msg}")]
    BadModelFile { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which predictor a trained model is.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Mlp,
    Rbfn,
    Ha,
    Timetable,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<ModelKind> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Some(ModelKind::Mlp),
            "rbfn" => Some(ModelKind::Rbfn),
            "ha" => Some(ModelKind::Ha),
            "timetable" => Some(ModelKind::Timetable),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Mlp => write!(f, "mlp"),
            ModelKind::Rbfn => write!(f, "rbfn"),
            ModelKind::Ha => write!(f, "ha"),
            ModelKind::Timetable => write!(f, "timetable"),
        }
    }
}

/// Parameters of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ModelParams {
    Mlp(MlpNet),
    Rbfn(RbfnNet),
    Ha(HaTable),
    /// Schedule restricted to the model's line.
    Timetable(Schedule),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub lines: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub seed: u64,
    pub final_loss: Option<f64>,
}

/// A trained predictor with its scaler and feature-set tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub feature_set: FeatureSet,
    /// Feature scaler (network models only).
    pub scaler: Option<Scaler>,
    /// Label standardization used during training (network models only).
    pub label_scaler: Option<Scaler>,
    pub params: ModelParams,
    pub meta: TrainingMeta,
    /// Line the model serves (HA and timetable baselines are per line).
    pub line: Option<String>,
    /// Schedule fallback for HA predictions on fully empty tables.
    pub fallback_schedule: Option<Schedule>,
}

impl TrainedModel {
    pub fn id(&self) -> String {
        match &self.line {
            Some(line) => format!("{}+{}@{line}", self.kind, self.feature_set),
            None => format!("{}+{}", self.kind, self.feature_set),
        }
    }

    /// Forward evaluation on the scaled feature vector, label units restored.
    /// Only meaningful for network models.
    fn forward_features(&self, features: &FeatureVector) -> Result<f64, ModelError> {
        let raw = self.feature_set.flatten(features).map_err(|missing| {
            ModelError::LayoutMismatch {
                set: self.feature_set,
                missing,
            }
        })?;
        let scaler = self.scaler.as_ref().expect("network models carry a scaler");
        let x = apply_scaler(scaler, &raw);
        let y_scaled = match &self.params {
            ModelParams::Mlp(net) => net.forward(&x),
            ModelParams::Rbfn(net) => net.forward(&x),
            _ => unreachable!("forward_features is only called for network models"),
        };
        let ls = self
            .label_scaler
            .as_ref()
            .expect("network models carry a label scaler");
        Ok(ls.unapply_one(y_scaled))
    }

    /// Predict travel seconds for one sample (features + meta), floored at
    /// [`MIN_PREDICTION_S`].
    pub fn predict(&self, sample: &TravelSample) -> Result<f64, ModelError> {
        let raw = match &self.params {
            ModelParams::Mlp(_) | ModelParams::Rbfn(_) => self.forward_features(&sample.features)?,
            ModelParams::Ha(table) => {
                let direction = direction_of(&sample.features);
                let line = self
                    .line
                    .as_deref()
                    .unwrap_or_else(|| sample.meta.line.as_str());
                ha_predict(
                    table,
                    line,
                    direction,
                    sample.meta.origin_idx,
                    sample.meta.dest_idx,
                    sample.meta.depart_s,
                    sample.meta.date,
                    self.fallback_schedule.as_ref(),
                )?
                .seconds
            }
            ModelParams::Timetable(schedule) => {
                let direction = direction_of(&sample.features);
                let line = self
                    .line
                    .as_deref()
                    .unwrap_or_else(|| sample.meta.line.as_str());
                schedule_eta(
                    schedule,
                    line,
                    direction,
                    sample.meta.origin_idx,
                    sample.meta.dest_idx,
                    sample.meta.depart_s,
                )?
            }
        };
        Ok(raw.max(MIN_PREDICTION_S))
    }
}

fn direction_of(features: &FeatureVector) -> Direction {
    if features.direction == 0 {
        Direction::A
    } else {
        Direction::B
    }
}

/// Anything that predicts travel seconds from a labeled sample's features
/// and metadata.
pub trait Predictor {
    fn id(&self) -> String;
    fn predict(&self, sample: &TravelSample) -> Result<f64, ModelError>;
}

impl Predictor for TrainedModel {
    fn id(&self) -> String {
        TrainedModel::id(self)
    }

    fn predict(&self, sample: &TravelSample) -> Result<f64, ModelError> {
        TrainedModel::predict(self, sample)
    }
}

/// Single forward evaluation of a model trained on the long-distance
/// dataset, floored at [`MIN_PREDICTION_S`].
pub fn predict_longdist(model: &TrainedModel, sample: &TravelSample) -> Result<f64, ModelError> {
    model.predict(sample)
}

/// Chain `k` single-hop predictions of a model trained on the hop dataset.
///
/// After each hop the predicted time becomes `tt_prev1` (shifting the
/// window), the next-stop and destination indices advance by one, the time
/// of day advances by the prediction, and pct resets to 0. Per-hop
/// predictions are floored at [`MIN_PREDICTION_S`]; the sum is returned.
pub fn predict_recursive(
    hop_model: &TrainedModel,
    query: &TravelSample,
    k: usize,
    route_len: u32,
) -> Result<f64, ModelError> {
    assert!(k >= 1, "k must be at least 1");
    let last_needed = query.features.next_stop_idx + k as u32 - 1;
    if last_needed > route_len {
        return Err(ModelError::BeyondRoute {
            hop: k,
            needed: last_needed,
            route_len,
        });
    }

    let mut features = query.features.clone();
    let mut meta = query.meta.clone();
    features.dest_stop_idx = features.next_stop_idx;
    meta.dest_idx = meta.origin_idx + 1;

    let mut total = 0.0;
    for _ in 0..k {
        let sample = TravelSample {
            features: features.clone(),
            label: 1.0,
            meta: meta.clone(),
        };
        let hop = hop_model.predict(&sample)?.max(MIN_PREDICTION_S);
        total += hop;

        features.tt_prev = [hop, features.tt_prev[0], features.tt_prev[1]];
        features.next_stop_idx += 1;
        features.dest_stop_idx = features.next_stop_idx;
        features.time_of_day += hop;
        features.pct = 0.0;
        meta.origin_idx += 1;
        meta.dest_idx = meta.origin_idx + 1;
        meta.depart_s += hop;
    }
    Ok(total)
}

/// Serialized wrapper with the format tag.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    model: TrainedModel,
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        model: model.clone(),
    };
    let json = serde_json::to_string_pretty(&file).expect("model serializes");
    std::fs::write(path, json).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let data = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ModelFile =
        serde_json::from_str(&data).map_err(|e| ModelError::BadModelFile {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    if file.format != MODEL_FORMAT {
        return Err(ModelError::BadModelFile {
            path: path.display().to_string(),
            msg: format!("unsupported format tag {:?}", file.format),
        });
    }
    Ok(file.model)
}

/// Weekday-aware day key of a date (used by HA tables).
pub fn day_key_of(date: NaiveDate, selector: DaySelector) -> DayKey {
    match selector {
        DaySelector::AllWorkingDays => {
            if matches!(date.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun) {
                DayKey::Weekend
            } else {
                DayKey::Working
            }
        }
        DaySelector::SameWeekday => DayKey::Weekday(date.weekday().num_days_from_monday() as u8),
    }
}
