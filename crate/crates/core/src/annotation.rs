//! Unit annotation protocol.
//!
//! A task shows the 60 top-responding segmented images of one unit plus 3
//! planted negatives, shuffled by a seed. A submission is accepted only if
//! every planted negative was rejected; the unit's precision is the share of
//! the 60 positives that the annotator kept.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{encode_png_stored, Image};
use crate::net::rank::sort_ranking;
use crate::net::spec::Unit;
use crate::rng::Rng;

pub const POSITIVES: usize = 60;
pub const PLANTED: usize = 3;
pub const TASK_SIZE: usize = POSITIVES + PLANTED;
pub const DEFAULT_MIN_PRECISION: f64 = 0.75;

/// The six concept categories, from low to high level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticGroup {
    #[serde(rename = "simple elements and colors")]
    SimpleElementsAndColors,
    #[serde(rename = "materials and textures")]
    MaterialsAndTextures,
    #[serde(rename = "regions and surfaces")]
    RegionsAndSurfaces,
    #[serde(rename = "object parts")]
    ObjectParts,
    #[serde(rename = "objects")]
    Objects,
    #[serde(rename = "scenes")]
    Scenes,
}

impl SemanticGroup {
    pub const ALL: [SemanticGroup; 6] = [
        SemanticGroup::SimpleElementsAndColors,
        SemanticGroup::MaterialsAndTextures,
        SemanticGroup::RegionsAndSurfaces,
        SemanticGroup::ObjectParts,
        SemanticGroup::Objects,
        SemanticGroup::Scenes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticGroup::SimpleElementsAndColors => "simple elements and colors",
            SemanticGroup::MaterialsAndTextures => "materials and textures",
            SemanticGroup::RegionsAndSurfaces => "regions and surfaces",
            SemanticGroup::ObjectParts => "object parts",
            SemanticGroup::Objects => "objects",
            SemanticGroup::Scenes => "scenes",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SemanticGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        SemanticGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown semantic group `{s}`")))
    }
}

/// One image's response for a unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitResponse {
    pub image_id: usize,
    /// Ranking score (post-activation maximum).
    pub score: f32,
    /// Most negative pre-activation value, when available.
    pub negative_score: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub index: usize,
    pub image: String,
    #[serde(skip)]
    pub image_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitTask {
    pub task_id: String,
    pub unit: Unit,
    pub seed: u64,
    pub entries: Vec<TaskEntry>,
    /// Entry indices of the planted negatives. Never sent to clients.
    pub planted: Vec<usize>,
}

/// What a client sees: no planted indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_id: String,
    pub unit: String,
    pub entries: Vec<TaskEntry>,
    pub categories: Vec<String>,
}

impl UnitTask {
    pub fn payload(&self) -> TaskPayload {
        TaskPayload {
            task_id: self.task_id.clone(),
            unit: self.unit.to_string(),
            entries: self.entries.clone(),
            categories: SemanticGroup::ALL.iter().map(|g| g.to_string()).collect(),
        }
    }

    pub fn planted_set(&self) -> BTreeSet<usize> {
        self.planted.iter().copied().collect()
    }
}

pub fn image_ref(unit: &Unit, image_id: usize) -> String {
    format!("/img/{}-{}-{}", unit.layer, unit.channel, image_id)
}

/// Parse the `<layer>-<channel>-<image>` id from an image reference.
pub fn parse_image_ref(id: &str) -> Option<(Unit, usize)> {
    let mut parts = id.trim_start_matches("/img/").rsplitn(3, '-');
    let image = parts.next()?.parse().ok()?;
    let channel = parts.next()?.parse().ok()?;
    let layer = parts.next()?;
    (!layer.is_empty()).then(|| (Unit::new(layer, channel), image))
}

fn task_id(unit: &Unit, seed: u64) -> String {
    format!("{unit}#{seed}")
}

fn shuffle_seed(unit: &Unit, seed: u64) -> u64 {
    // FNV-1a over the unit name, folded into the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in unit.to_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed
}

/// Top-60 positives plus the 3 lowest-response images, shuffled by `seed`.
pub fn build_task(unit: &Unit, responses: &[UnitResponse], seed: u64) -> Result<UnitTask> {
    if responses.len() < TASK_SIZE {
        return Err(Error::InvalidArgument(format!(
            "unit {unit}: {} images, a task needs at least {TASK_SIZE}",
            responses.len()
        )));
    }
    let mut ranked: Vec<(usize, f32)> = responses.iter().map(|r| (r.image_id, r.score)).collect();
    sort_ranking(&mut ranked);
    let positives: Vec<usize> = ranked[..POSITIVES].iter().map(|(id, _)| *id).collect();
    let chosen: BTreeSet<usize> = positives.iter().copied().collect();

    // Most negative pre-activation first; fall back to the lowest score.
    let mut rest: Vec<(usize, f32)> = responses
        .iter()
        .filter(|r| !chosen.contains(&r.image_id))
        .map(|r| (r.image_id, -r.negative_score.unwrap_or(r.score)))
        .collect();
    sort_ranking(&mut rest);
    let planted_ids: Vec<usize> = rest[..PLANTED].iter().map(|(id, _)| *id).collect();

    let mut ids: Vec<(usize, bool)> = positives
        .into_iter()
        .map(|id| (id, false))
        .chain(planted_ids.into_iter().map(|id| (id, true)))
        .collect();
    Rng::new(shuffle_seed(unit, seed)).shuffle(&mut ids);

    let mut planted = Vec::with_capacity(PLANTED);
    let entries = ids
        .iter()
        .enumerate()
        .map(|(index, &(id, is_planted))| {
            if is_planted {
                planted.push(index);
            }
            TaskEntry {
                index,
                image: image_ref(unit, id),
                image_id: id,
            }
        })
        .collect();
    Ok(UnitTask {
        task_id: task_id(unit, seed),
        unit: unit.clone(),
        seed,
        entries,
        planted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: String,
    #[serde(default)]
    pub annotator: String,
    pub concept: String,
    pub category: String,
    /// Indices of entries marked as not fitting the concept.
    pub rejected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub task_id: String,
    pub unit: Unit,
    pub concept: String,
    pub category: SemanticGroup,
    pub rejected: Vec<usize>,
    pub rejected_positives: usize,
    pub precision: f64,
    pub timestamp: u64,
    pub annotator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("quality control: planted negatives {missing:?} were not marked")]
    QualityControl { missing: Vec<usize> },
    #[error("invalid submission: {0}")]
    Validation(String),
    #[error("task `{0}` already has an accepted record")]
    Conflict(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

/// `(60 - rejected positives) / 60`; planted negatives never count.
pub fn unit_precision(record: &AnnotationRecord) -> f64 {
    (POSITIVES - record.rejected_positives.min(POSITIVES)) as f64 / POSITIVES as f64
}

/// Validate a submission against its task and build the record.
pub fn evaluate_submission(task: &UnitTask, sub: &Submission, timestamp: u64) -> std::result::Result<AnnotationRecord, SubmitError> {
    if sub.task_id != task.task_id {
        return Err(SubmitError::UnknownTask(sub.task_id.clone()));
    }
    let concept = sub.concept.trim();
    if concept.is_empty() {
        return Err(SubmitError::Validation("concept text is empty".into()));
    }
    let category: SemanticGroup = sub
        .category
        .parse()
        .map_err(|_| SubmitError::Validation(format!("category `{}` is not one of the 6 groups", sub.category)))?;
    let rejected: BTreeSet<usize> = sub.rejected.iter().copied().collect();
    if rejected.len() != sub.rejected.len() {
        return Err(SubmitError::Validation("duplicate rejected index".into()));
    }
    if let Some(bad) = rejected.iter().find(|&&i| i >= task.entries.len()) {
        return Err(SubmitError::Validation(format!("rejected index {bad} out of range")));
    }
    let missing: Vec<usize> = task
        .planted
        .iter()
        .copied()
        .filter(|i| !rejected.contains(i))
        .collect();
    if !missing.is_empty() {
        return Err(SubmitError::QualityControl { missing });
    }
    let planted = task.planted_set();
    let rejected_positives = rejected.iter().filter(|i| !planted.contains(i)).count();
    let mut record = AnnotationRecord {
        task_id: task.task_id.clone(),
        unit: task.unit.clone(),
        concept: concept.to_string(),
        category,
        rejected: rejected.into_iter().collect(),
        rejected_positives,
        precision: 0.0,
        timestamp,
        annotator: sub.annotator.clone(),
    };
    record.precision = unit_precision(&record);
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemanticsDistribution {
    pub layer: String,
    pub min_precision: f64,
    pub units_total: usize,
    pub units_passing: usize,
    /// Percentage per group, in [`SemanticGroup::ALL`] order.
    pub percentages: [f64; 6],
    /// Mean precision over all units of the layer, passing or not.
    pub mean_precision: f64,
    /// Set when no unit passes the precision filter.
    pub empty: bool,
}

/// Category distribution over units with precision `>= min_precision`.
pub fn semantics_distribution(records: &[AnnotationRecord], layer: &str, min_precision: f64) -> SemanticsDistribution {
    let layer_records: Vec<&AnnotationRecord> = records.iter().filter(|r| r.unit.layer == layer).collect();
    let passing: Vec<&&AnnotationRecord> = layer_records
        .iter()
        .filter(|r| r.precision >= min_precision)
        .collect();
    let mut percentages = [0.0; 6];
    for r in &passing {
        percentages[r.category.index()] += 1.0;
    }
    if !passing.is_empty() {
        for p in percentages.iter_mut() {
            *p = 100.0 * *p / passing.len() as f64;
        }
    }
    let mean_precision = if layer_records.is_empty() {
        0.0
    } else {
        layer_records.iter().map(|r| r.precision).sum::<f64>() / layer_records.len() as f64
    };
    SemanticsDistribution {
        layer: layer.to_string(),
        min_precision,
        units_total: layer_records.len(),
        units_passing: passing.len(),
        percentages,
        mean_precision,
        empty: passing.is_empty(),
    }
}

/// Append-only record log, one JSON object per line.
#[derive(Debug)]
pub struct RecordStore {
    path: Option<PathBuf>,
    writer: Option<File>,
    records: Vec<AnnotationRecord>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            writer: None,
            records: Vec::new(),
        }
    }

    /// Open (or create) a log file, loading existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let records = if path.exists() {
            read_records(&path)?
        } else {
            Vec::new()
        };
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path: Some(path),
            writer: Some(writer),
            records,
        })
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn contains_task(&self, task_id: &str) -> bool {
        self.records.iter().any(|r| r.task_id == task_id)
    }

    pub fn append(&mut self, record: AnnotationRecord) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let path = self.path.clone().unwrap_or_default();
            w.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        self.records.push(record);
        Ok(())
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Renders the segmented image shown for one (unit, image) pair.
pub trait ImageSource: Send + Sync {
    fn render(&self, unit: &Unit, image_id: usize) -> Result<Image>;
}

/// Shared state behind the HTTP endpoints. Reads run concurrently; every
/// write goes through the store's mutex.
pub struct AnnotationService {
    responses: HashMap<Unit, Vec<UnitResponse>>,
    images: Box<dyn ImageSource>,
    tasks: RwLock<HashMap<String, UnitTask>>,
    store: Mutex<RecordStore>,
}

impl AnnotationService {
    pub fn new(responses: HashMap<Unit, Vec<UnitResponse>>, images: Box<dyn ImageSource>, store: RecordStore) -> Self {
        Self {
            responses,
            images,
            tasks: RwLock::new(HashMap::new()),
            store: Mutex::new(store),
        }
    }

    pub fn units(&self) -> Vec<Unit> {
        let mut u: Vec<Unit> = self.responses.keys().cloned().collect();
        u.sort();
        u
    }

    /// Issue (or re-issue) the task for `(unit, seed)`.
    pub fn task(&self, unit: &Unit, seed: u64) -> Result<TaskPayload> {
        let id = task_id(unit, seed);
        if let Some(t) = self.tasks.read().unwrap().get(&id) {
            return Ok(t.payload());
        }
        let responses = self
            .responses
            .get(unit)
            .ok_or_else(|| Error::InvalidArgument(format!("unit {unit} is not served")))?;
        let task = build_task(unit, responses, seed)?;
        let payload = task.payload();
        self.tasks.write().unwrap().entry(id).or_insert(task);
        Ok(payload)
    }

    pub fn image_png(&self, id: &str) -> Result<Vec<u8>> {
        let (unit, image_id) =
            parse_image_ref(id).ok_or_else(|| Error::InvalidArgument(format!("image id `{id}`")))?;
        if !self
            .responses
            .get(&unit)
            .is_some_and(|rs| rs.iter().any(|r| r.image_id == image_id))
        {
            return Err(Error::InvalidArgument(format!("image `{id}` is not served")));
        }
        Ok(encode_png_stored(&self.images.render(&unit, image_id)?))
    }

    pub fn submit(&self, sub: &Submission) -> std::result::Result<AnnotationRecord, SubmitError> {
        let task = self
            .tasks
            .read()
            .unwrap()
            .get(&sub.task_id)
            .cloned()
            .ok_or_else(|| SubmitError::UnknownTask(sub.task_id.clone()))?;
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let record = evaluate_submission(&task, sub, now)?;
        let mut store = self.store.lock().unwrap();
        if store.contains_task(&record.task_id) {
            return Err(SubmitError::Conflict(record.task_id));
        }
        store
            .append(record.clone())
            .map_err(|e| SubmitError::Storage(e.to_string()))?;
        Ok(record)
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.store.lock().unwrap().records().to_vec()
    }

    pub fn layer_stats(&self, layer: &str, min_precision: f64) -> SemanticsDistribution {
        semantics_distribution(self.store.lock().unwrap().records(), layer, min_precision)
    }
}
