//! AI2D-Caption-style annotation files: loading, conversion to plans, and
//! in-context example selection.
//!
//! File layout (`schema_version` 1):
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "records": [{
//!     "id": "4021", "caption": "...", "topic": "astronomy", "split": "train",
//!     "image": {"width": 640, "height": 480},
//!     "entities": [{"id": "a", "kind": "object", "box": [x, y, w, h], "text": "sun"}],
//!     "relations": [{"source": "a", "target": "b", "kind": "arrow"}]
//!   }]
//! }
//! ```
//!
//! Boxes are in source image pixels. `kind` is `object` or `text_label`;
//! relation kinds are `arrow`, `line` and `labels`.

use std::collections::BTreeMap;
use std::path::Path;

use diagplan_core::llm::InContextExample;
use diagplan_core::plan::{DiagramPlan, Entity, EntityId, EntityKind, GridBox, RelationKind, Relationship, GRID};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub id: String,
    pub kind: EntityKind,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationAnnotation {
    pub source: String,
    pub target: String,
    pub kind: RelationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub caption: String,
    #[serde(default)]
    pub topic: String,
    pub split: Split,
    pub image: ImageSize,
    #[serde(default)]
    pub entities: Vec<EntityAnnotation>,
    #[serde(default)]
    pub relations: Vec<RelationAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("image size must be positive")]
    BadImage,
    #[error("entity id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("box of {0:?} lies outside the image")]
    BoxOutOfBounds(String),
    #[error("entity {0:?} has no text")]
    EmptyText(String),
    #[error("relation refers to unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("relation {0:?} -> {1:?} does not fit its kind")]
    BadRelation(String, String),
}

impl DatasetRecord {
    pub fn check(&self) -> Result<(), RecordError> {
        let ImageSize { width, height } = self.image;
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(RecordError::BadImage);
        }
        let mut kinds = BTreeMap::new();
        for e in &self.entities {
            if kinds.insert(e.id.as_str(), e.kind).is_some() {
                return Err(RecordError::DuplicateId(e.id.clone()));
            }
            let [x, y, w, h] = e.bbox;
            let inside = [x, y, w, h].iter().all(|v| v.is_finite())
                && x >= 0.0
                && y >= 0.0
                && w > 0.0
                && h > 0.0
                && x + w <= width
                && y + h <= height;
            if !inside {
                return Err(RecordError::BoxOutOfBounds(e.id.clone()));
            }
            if clean_text(&e.text).is_empty() {
                return Err(RecordError::EmptyText(e.id.clone()));
            }
        }
        for r in &self.relations {
            let kind = |id: &String| kinds.get(id.as_str()).copied().ok_or_else(|| RecordError::UnknownEntity(id.clone()));
            let (s, t) = (kind(&r.source)?, kind(&r.target)?);
            let fits = match r.kind {
                RelationKind::Labels => s == EntityKind::TextLabel && t == EntityKind::Object,
                RelationKind::Arrow | RelationKind::Line => {
                    s == EntityKind::Object && t == EntityKind::Object && r.source != r.target
                }
            };
            if !fits {
                return Err(RecordError::BadRelation(r.source.clone(), r.target.clone()));
            }
        }
        Ok(())
    }
}

fn clean_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A record that failed to load, by position in the file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRecord {
    pub index: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedDataset {
    pub records: Vec<DatasetRecord>,
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("dataset is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {found}, expected {SCHEMA_VERSION}")]
    SchemaVersion { found: u32 },
    #[error("asked for {wanted} examples but the train pool has {available}")]
    NotEnoughExamples { wanted: usize, available: usize },
}

#[derive(Deserialize)]
struct RawFile {
    schema_version: u32,
    #[serde(default)]
    records: Vec<serde_json::Value>,
}

pub fn parse_records(text: &str) -> Result<LoadedDataset, DatasetError> {
    if text.trim().is_empty() {
        return Ok(LoadedDataset::default());
    }
    let raw: RawFile = serde_json::from_str(text)?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(DatasetError::SchemaVersion { found: raw.schema_version });
    }
    let mut out = LoadedDataset::default();
    for (index, value) in raw.records.into_iter().enumerate() {
        let id = value.get("id").and_then(|v| v.as_str()).map(String::from);
        let result = serde_json::from_value::<DatasetRecord>(value)
            .map_err(|e| e.to_string())
            .and_then(|r| r.check().map(|()| r).map_err(|e| e.to_string()));
        match result {
            Ok(r) => out.records.push(r),
            Err(reason) => {
                log::warn!("skipping record {index} ({}): {reason}", id.as_deref().unwrap_or("no id"));
                out.skipped.push(SkippedRecord { index, id, reason });
            }
        }
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<LoadedDataset, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Read { path: path.display().to_string(), source })?;
    parse_records(&text)
}

/// Pixel coordinate to grid units, rounding half up.
fn to_grid(v: f64, side: f64) -> u32 {
    let g = (v * f64::from(GRID) / side + 0.5).floor();
    g.clamp(0.0, f64::from(GRID)) as u32
}

/// Converts a checked record. Ids become `I0..` and `T0..` in annotation
/// order; boxes are quantized onto the grid.
pub fn record_to_plan(record: &DatasetRecord) -> DiagramPlan {
    let mut plan = DiagramPlan::new(clean_text(&record.caption));
    let mut ids = BTreeMap::new();
    let (mut objects, mut labels) = (0, 0);
    let ImageSize { width, height } = record.image;
    for e in &record.entities {
        let id = match e.kind {
            EntityKind::Object => {
                objects += 1;
                EntityId::object(objects - 1)
            }
            EntityKind::TextLabel => {
                labels += 1;
                EntityId::label(labels - 1)
            }
        };
        ids.insert(e.id.as_str(), id);
        let [x, y, w, h] = e.bbox;
        let gx = to_grid(x, width);
        let gy = to_grid(y, height);
        let b = GridBox { x: gx, y: gy, w: to_grid(w, width).max(1), h: to_grid(h, height).max(1) };
        plan.push(Entity::new(id, clean_text(&e.text)), b);
    }
    for r in &record.relations {
        plan.relationships.push(Relationship { source: ids[r.source.as_str()], target: ids[r.target.as_str()], kind: r.kind });
    }
    plan
}

pub fn record_to_example(record: &DatasetRecord) -> InContextExample {
    InContextExample { caption: clean_text(&record.caption), topic: record.topic.clone(), plan: record_to_plan(record) }
}

/// Picks `n` train records: those whose topic matches come first, then the
/// rest, each group in file order. Test records are never used.
pub fn select_examples(
    records: &[DatasetRecord],
    n: usize,
    topic: Option<&str>,
) -> Result<Vec<InContextExample>, DatasetError> {
    let pool: Vec<&DatasetRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    if n > pool.len() {
        return Err(DatasetError::NotEnoughExamples { wanted: n, available: pool.len() });
    }
    let matches = |r: &DatasetRecord| topic.is_some_and(|t| r.topic.trim().eq_ignore_ascii_case(t.trim()));
    let ordered = pool.iter().filter(|r| matches(r)).chain(pool.iter().filter(|r| !matches(r)));
    Ok(ordered.take(n).map(|r| record_to_example(r)).collect())
}
