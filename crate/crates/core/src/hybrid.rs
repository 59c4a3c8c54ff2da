//! Hybrid dispatch: per (line group, distance band) selection of the best
//! (model kind, feature set) pair, with prediction through a model registry.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureSet, TravelSample};
use crate::models::{ModelError, ModelKind, Predictor, TrainedModel};
use crate::timetable::{GroupTable, LineGroup, TimetableError};

#[derive(Debug, Error)]
pub enum HybridError {
    #[error(transparent)]
    UnknownLine(#[from] TimetableError),
    #[error("no trained model registered for {0}")]
    MissingModel(RegistryKey),
    #[error("distance must be >= 1, got {0}")]
    BadDistance(u32),
    #[error("dispatch table names an unusable model kind {0} (only mlp/rbfn dispatchable)")]
    BadDispatchKind(ModelKind),
    #[error("prediction failed: {0}")]
    Prediction(#[from] ModelError),
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

/// Distance band of the dispatch table.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistanceBand {
    /// Up to 5 stops.
    UpTo5,
    /// 6 to 15 stops.
    Mid,
    /// 16 stops and more.
    From16,
}

impl DistanceBand {
    pub fn of(distance: u32) -> DistanceBand {
        match distance {
            0..=5 => DistanceBand::UpTo5,
            6..=15 => DistanceBand::Mid,
            _ => DistanceBand::From16,
        }
    }

    pub const ALL: [DistanceBand; 3] = [DistanceBand::UpTo5, DistanceBand::Mid, DistanceBand::From16];

    pub fn parse(s: &str) -> Option<DistanceBand> {
        match s {
            "1-5" => Some(DistanceBand::UpTo5),
            "6-15" => Some(DistanceBand::Mid),
            "16+" => Some(DistanceBand::From16),
            _ => None,
        }
    }
}

impl fmt::Display for DistanceBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceBand::UpTo5 => write!(f, "1-5"),
            DistanceBand::Mid => write!(f, "6-15"),
            DistanceBand::From16 => write!(f, "16+"),
        }
    }
}

/// Mapping (group, band) -> (model kind, feature set). The default is the
/// best observed (model, feature set) pair for each of the 8 groups x 3 bands.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchTable {
    cells: BTreeMap<(u8, DistanceBand), (ModelKind, FeatureSet)>,
}

impl Default for DispatchTable {
    fn default() -> Self {
        use DistanceBand::*;
        use FeatureSet::{HistAvg, Timetable};
        use ModelKind::{Mlp, Rbfn};

        let mut cells = BTreeMap::new();
        // Short distances: timetable features win; Center-Praga and
        // Short-within-center prefer the RBFN there.
        for group in LineGroup::ALL {
            let short_kind = match group {
                LineGroup::CenterPraga | LineGroup::ShortCenter => Rbfn,
                _ => Mlp,
            };
            cells.insert((group.group_id(), UpTo5), (short_kind, Timetable));
            let mid_kind = match group {
                LineGroup::ShortPeriphery => Rbfn,
                _ => Mlp,
            };
            cells.insert((group.group_id(), Mid), (mid_kind, HistAvg));
            cells.insert((group.group_id(), From16), (Mlp, HistAvg));
        }
        Self { cells }
    }
}

impl DispatchTable {
    pub fn get(&self, group: LineGroup, band: DistanceBand) -> (ModelKind, FeatureSet) {
        self.cells[&(group.group_id(), band)]
    }

    pub fn set(&mut self, group: LineGroup, band: DistanceBand, kind: ModelKind, set: FeatureSet) {
        self.cells.insert((group.group_id(), band), (kind, set));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u8, DistanceBand), &(ModelKind, FeatureSet))> {
        self.cells.iter()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Override entries from `dispatch.csv`:
    /// `group_id,band,model,feature_set` with band tokens 1-5/6-15/16+.
    pub fn load_overrides(&mut self, path: &Path) -> Result<(), HybridError> {
        let file = std::fs::File::open(path).map_err(|source| HybridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| HybridError::Csv {
                path: path.display().to_string(),
                source: e,
            })?;
            let row = i as u64 + 2;
            let bad = |msg: String| HybridError::BadRow {
                path: path.display().to_string(),
                row,
                msg,
            };
            if rec.len() != 4 {
                return Err(bad("expected group_id,band,model,feature_set".into()));
            }
            let group_id: u8 = rec[0].parse().map_err(|e| bad(format!("bad group_id: {e}")))?;
            LineGroup::from_group_id(group_id).map_err(HybridError::UnknownLine)?;
            let band = DistanceBand::parse(&rec[1])
                .ok_or_else(|| bad(format!("bad band {:?} (use 1-5, 6-15, 16+)", &rec[1])))?;
            let kind = ModelKind::parse(&rec[2])
                .ok_or_else(|| bad(format!("bad model {:?}", &rec[2])))?;
            if !matches!(kind, ModelKind::Mlp | ModelKind::Rbfn) {
                return Err(HybridError::BadDispatchKind(kind));
            }
            let set = FeatureSet::parse(&rec[3])
                .ok_or_else(|| bad(format!("bad feature_set {:?}", &rec[3])))?;
            self.cells.insert((group_id, band), (kind, set));
        }
        Ok(())
    }
}

/// Resolve the (model kind, feature set) serving a line at a distance.
pub fn dispatch(
    table: &DispatchTable,
    groups: &GroupTable,
    line: &str,
    distance_stops: u32,
) -> Result<(ModelKind, FeatureSet), HybridError> {
    if distance_stops < 1 {
        return Err(HybridError::BadDistance(distance_stops));
    }
    let group = groups.group_of(line)?;
    Ok(table.get(group, DistanceBand::of(distance_stops)))
}

/// Key under which trained models are registered for hybrid prediction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RegistryKey {
    pub kind: ModelKind,
    pub feature_set: FeatureSet,
    pub line: String,
}

impl fmt::Display for RegistryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}@{}", self.kind, self.feature_set, self.line)
    }
}

/// Trained models indexed by (kind, feature set, line).
#[derive(Debug, Default)]
pub struct ModelRegistry {
    models: BTreeMap<RegistryKey, TrainedModel>,
}

impl ModelRegistry {
    pub fn insert(&mut self, line: &str, model: TrainedModel) {
        self.models.insert(
            RegistryKey {
                kind: model.kind,
                feature_set: model.feature_set,
                line: line.to_string(),
            },
            model,
        );
    }

    pub fn get(&self, key: &RegistryKey) -> Option<&TrainedModel> {
        self.models.get(key)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// A hybrid prediction annotated with the model that served it.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrediction {
    pub seconds: f64,
    pub model_id: String,
}

/// Dispatch on (line group, distance band), then predict with the selected
/// registered model.
pub fn hybrid_predict(
    registry: &ModelRegistry,
    table: &DispatchTable,
    groups: &GroupTable,
    sample: &TravelSample,
) -> Result<HybridPrediction, HybridError> {
    let distance = sample.meta.dest_idx.saturating_sub(sample.meta.origin_idx);
    let (kind, feature_set) = dispatch(table, groups, &sample.meta.line, distance)?;
    let key = RegistryKey {
        kind,
        feature_set,
        line: sample.meta.line.clone(),
    };
    let model = registry.get(&key).ok_or(HybridError::MissingModel(key))?;
    let seconds = model.predict(sample)?;
    Ok(HybridPrediction {
        seconds,
        model_id: model.id(),
    })
}

/// The hybrid dispatcher as a [`Predictor`], for the evaluation harness.
pub struct HybridModel<'a> {
    pub registry: &'a ModelRegistry,
    pub table: DispatchTable,
    pub groups: GroupTable,
}

impl Predictor for HybridModel<'_> {
    fn id(&self) -> String {
        "hybrid".to_string()
    }

    fn predict(&self, sample: &TravelSample) -> Result<f64, ModelError> {
        hybrid_predict(self.registry, &self.table, &self.groups, sample)
            .map(|p| p.seconds)
            .map_err(|e| match e {
                HybridError::Prediction(inner) => inner,
                other => ModelError::BadModelFile {
                    path: "registry".into(),
                    msg: other.to_string(),
                },
            })
    }
}
