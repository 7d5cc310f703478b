//! Object-emergence statistics over an annotated scene dataset: object
//! frequency, units discovered per object class, and the number of scenes for
//! which each object class is the most informative one.
//!
//! "Informative" is measured as one-vs-all AP of ranking images by the pixel
//! fraction a class covers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationRecord, SemanticGroup};
use crate::error::{Error, Result};
use crate::image::{Image, LabelImage};
use crate::metrics::{pearson, pr_ap};
use crate::net::spec::Unit;

pub const DISCRIMINABILITY_METRIC: &str =
    "one-vs-all average precision of ranking images by the class's pixel-coverage fraction";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub class: String,
    /// Label id of the instance in the image's label mask.
    pub label_id: u16,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub id: String,
    pub scene: String,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<ObjectInstance>,
}

impl AnnotatedImage {
    pub fn new(id: impl Into<String>, scene: impl Into<String>, width: usize, height: usize, instances: Vec<ObjectInstance>) -> Result<Self> {
        let scene = scene.into();
        let id = id.into();
        if scene.trim().is_empty() {
            return Err(Error::InvalidArgument(format!("image {id}: empty scene label")));
        }
        let covered: usize = instances.iter().map(|i| i.pixels).sum();
        if covered > width * height {
            return Err(Error::InvalidArgument(format!(
                "image {id}: instances cover {covered} pixels of a {width}x{height} image"
            )));
        }
        Ok(Self {
            id,
            scene,
            width,
            height,
            instances,
        })
    }

    /// Fraction of the image covered by `class`.
    pub fn coverage(&self, class: &str) -> f64 {
        let px: usize = self
            .instances
            .iter()
            .filter(|i| i.class == class)
            .map(|i| i.pixels)
            .sum();
        px as f64 / (self.width * self.height) as f64
    }
}

#[derive(Debug, Deserialize)]
struct IndexEntry {
    image: String,
    scene: String,
    mask: String,
    classes: BTreeMap<String, String>,
}

/// Load a dataset from an index JSON file; paths are relative to it.
pub fn load_dataset(index: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>> {
    let index = index.as_ref();
    let text = std::fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
    let entries: Vec<IndexEntry> = serde_json::from_str(&text)?;
    let root = index.parent().map(Path::to_path_buf).unwrap_or_else(PathBuf::new);
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let mask = LabelImage::load(root.join(&e.mask))?;
        let image_path = root.join(&e.image);
        if image_path.exists() {
            let img = Image::load(&image_path)?;
            if (img.width(), img.height()) != (mask.width, mask.height) {
                return Err(Error::InvalidArgument(format!(
                    "{}: mask {}x{} does not match image {}x{}",
                    e.image,
                    mask.width,
                    mask.height,
                    img.width(),
                    img.height()
                )));
            }
        }
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for &l in &mask.labels {
            *counts.entry(l).or_default() += 1;
        }
        let mut instances = Vec::with_capacity(e.classes.len());
        for (id, class) in &e.classes {
            let label_id: u16 = id
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{}: label id `{id}` is not a u16", e.image)))?;
            instances.push(ObjectInstance {
                class: class.clone(),
                label_id,
                pixels: counts.get(&label_id).copied().unwrap_or(0),
            });
        }
        out.push(AnnotatedImage::new(e.image, e.scene, mask.width, mask.height, instances)?);
    }
    Ok(out)
}

/// Sort `(name, count)` descending by count, ties alphabetical.
fn sort_counts(v: &mut [(String, usize)]) {
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Instances per object class, descending, ties alphabetical.
pub fn object_frequency(dataset: &[AnnotatedImage]) -> Result<Vec<(String, usize)>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for inst in dataset.iter().flat_map(|i| &i.instances) {
        *counts.entry(&inst.class).or_default() += 1;
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    sort_counts(&mut out);
    Ok(out)
}

/// Free-text concept tag to canonical object class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagMapping {
    map: BTreeMap<String, String>,
}

impl TagMapping {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            map: pairs.into_iter().map(|(k, v)| (normalize(&k), v)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<String, String> = serde_json::from_str(&text)?;
        Ok(Self::new(raw))
    }

    /// Lookup is case- and surrounding-whitespace-insensitive.
    pub fn get(&self, tag: &str) -> Option<&str> {
        self.map.get(&normalize(tag)).map(String::as_str)
    }
}

fn normalize(tag: &str) -> String {
    tag.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitObjectCounts {
    pub counts: Vec<(String, usize)>,
    pub unmapped: Vec<(Unit, String)>,
}

/// Units per object class among records whose category is in `categories`
/// and whose precision is at least `min_precision`.
pub fn unit_object_counts(
    records: &[AnnotationRecord],
    mapping: &TagMapping,
    min_precision: f64,
    categories: &[SemanticGroup],
) -> UnitObjectCounts {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut unmapped = Vec::new();
    for r in records {
        if !categories.contains(&r.category) || r.precision < min_precision {
            continue;
        }
        match mapping.get(&r.concept) {
            Some(class) => *counts.entry(class.to_string()).or_default() += 1,
            None => unmapped.push((r.unit.clone(), r.concept.clone())),
        }
    }
    let mut counts: Vec<(String, usize)> = counts.into_iter().collect();
    sort_counts(&mut counts);
    UnitObjectCounts { counts, unmapped }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneObjectAp {
    pub scene: String,
    pub class: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformativeObjects {
    /// Every class with the number of scenes it wins, descending.
    pub counts: Vec<(String, usize)>,
    /// Winning class per scene.
    pub winners: Vec<(String, String)>,
    pub table: Vec<SceneObjectAp>,
    pub metric: &'static str,
}

/// Most informative object per scene over the scenes present in the data.
pub fn informative_objects(dataset: &[AnnotatedImage]) -> Result<InformativeObjects> {
    let scenes: Vec<String> = dataset
        .iter()
        .map(|i| i.scene.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    informative_objects_for(dataset, &scenes)
}

/// Like [`informative_objects`] over an explicit scene list; a listed scene
/// without images is an error.
pub fn informative_objects_for(dataset: &[AnnotatedImage], scenes: &[String]) -> Result<InformativeObjects> {
    if scenes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 scene categories, got {}",
            scenes.len()
        )));
    }
    for s in scenes {
        if !dataset.iter().any(|i| &i.scene == s) {
            return Err(Error::InvalidArgument(format!("scene `{s}` has no images")));
        }
    }
    let classes: BTreeSet<&str> = dataset
        .iter()
        .flat_map(|i| i.instances.iter().map(|x| x.class.as_str()))
        .collect();
    let classes: Vec<&str> = classes.into_iter().collect();
    // Canonical order so the result does not depend on dataset order.
    let mut images: Vec<&AnnotatedImage> = dataset.iter().collect();
    images.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.scene.cmp(&b.scene)));
    let coverage: Vec<Vec<f64>> = classes
        .iter()
        .map(|c| images.iter().map(|i| i.coverage(c)).collect())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..classes.len()).map(move |c| (s, c)))
        .collect();
    let aps: Vec<f64> = pairs
        .par_iter()
        .map(|&(s, c)| {
            let positives: Vec<bool> = images.iter().map(|i| i.scene == scenes[s]).collect();
            pr_ap(&coverage[c], &positives).map(|curve| curve.average_precision)
        })
        .collect::<Result<_>>()?;

    let mut table = Vec::with_capacity(pairs.len());
    let mut wins: BTreeMap<&str, usize> = classes.iter().map(|&c| (c, 0)).collect();
    let mut winners = Vec::with_capacity(scenes.len());
    for (s, scene) in scenes.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..classes.len() {
            let ap = aps[s * classes.len() + c];
            table.push(SceneObjectAp {
                scene: scene.clone(),
                class: classes[c].to_string(),
                ap,
            });
            // classes are sorted, so strict > keeps the alphabetical winner on ties
            if best.map_or(true, |(_, b)| ap > b) {
                best = Some((c, ap));
            }
        }
        if let Some((c, _)) = best {
            *wins.get_mut(classes[c]).unwrap() += 1;
            winners.push((scene.clone(), classes[c].to_string()));
        }
    }
    let mut counts: Vec<(String, usize)> = wins.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    sort_counts(&mut counts);
    Ok(InformativeObjects {
        counts,
        winners,
        table,
        metric: DISCRIMINABILITY_METRIC,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub x: String,
    pub y: String,
    pub classes: Vec<String>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub r: f64,
}

/// Pearson correlation of two per-class tables over the classes of `x`;
/// classes missing from `y` count as 0.
pub fn correlate(
    x_name: &str,
    x: &[(String, usize)],
    y_name: &str,
    y: &[(String, usize)],
) -> Result<Correlation> {
    let lookup: BTreeMap<&str, usize> = y.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut classes = Vec::with_capacity(x.len());
    let mut xs = Vec::with_capacity(x.len());
    let mut ys = Vec::with_capacity(x.len());
    for (class, v) in x {
        classes.push(class.clone());
        xs.push(*v as f64);
        ys.push(lookup.get(class.as_str()).copied().unwrap_or(0) as f64);
    }
    let r = pearson(&xs, &ys)?;
    Ok(Correlation {
        x: x_name.to_string(),
        y: y_name.to_string(),
        classes,
        xs,
        ys,
        r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str, scene: &str, objs: &[(&str, usize)]) -> AnnotatedImage {
        let instances = objs
            .iter()
            .enumerate()
            .map(|(i, (c, px))| ObjectInstance {
                class: c.to_string(),
                label_id: i as u16 + 1,
                pixels: *px,
            })
            .collect();
        AnnotatedImage::new(id, scene, 10, 10, instances).unwrap()
    }

    #[test]
    fn frequency_example_and_ties() {
        let d = vec![
            img("a", "s", &[("wall", 5)]),
            img("b", "s", &[("wall", 5)]),
            img("c", "s", &[("bed", 5)]),
        ];
        assert_eq!(
            object_frequency(&d).unwrap(),
            vec![("wall".to_string(), 2), ("bed".to_string(), 1)]
        );
        let t = vec![img("a", "s", &[("zebra", 1), ("apple", 1)])];
        assert_eq!(object_frequency(&t).unwrap()[0].0, "apple");
        assert!(object_frequency(&[]).is_err());
    }

    #[test]
    fn exclusive_class_is_informative() {
        let d = vec![
            img("1", "bedroom", &[("A", 30), ("B", 10)]),
            img("2", "bedroom", &[("A", 20), ("B", 10)]),
            img("3", "street", &[("B", 40)]),
            img("4", "street", &[("B", 10)]),
        ];
        let r = informative_objects(&d).unwrap();
        let bedroom_a = r.table.iter().find(|t| t.scene == "bedroom" && t.class == "A").unwrap();
        assert_eq!(bedroom_a.ap, 1.0);
        assert_eq!(r.winners[0], ("bedroom".to_string(), "A".to_string()));
    }

    #[test]
    fn uniform_class_gives_prevalence() {
        let d = vec![
            img("1", "x", &[("wall", 50)]),
            img("2", "y", &[("wall", 50)]),
            img("3", "y", &[("wall", 50)]),
        ];
        let r = informative_objects(&d).unwrap();
        assert!((r.table[0].ap - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.table[1].ap - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_alphabetical() {
        let d = vec![img("1", "x", &[("b", 10), ("a", 10)]), img("2", "y", &[])];
        let r = informative_objects(&d).unwrap();
        assert_eq!(r.winners[0].1, "a");
    }

    #[test]
    fn scene_without_images() {
        let d = vec![img("1", "x", &[("a", 1)]), img("2", "y", &[("a", 1)])];
        let scenes = vec!["x".to_string(), "z".to_string()];
        assert!(informative_objects_for(&d, &scenes).is_err());
        assert!(informative_objects(&d[..1]).is_err());
    }

    fn rec(concept: &str, category: SemanticGroup, precision: f64) -> AnnotationRecord {
        AnnotationRecord {
            task_id: String::new(),
            unit: Unit::new("pool5", 0),
            concept: concept.into(),
            category,
            rejected: vec![],
            rejected_positives: 0,
            precision,
            timestamp: 0,
            annotator: String::new(),
        }
    }

    #[test]
    fn unit_counts() {
        let mapping = TagMapping::new([
            ("Building".to_string(), "building".to_string()),
            ("house".to_string(), "building".to_string()),
        ]);
        let mut records: Vec<AnnotationRecord> = (0..15)
            .map(|i| rec(if i % 2 == 0 { "building" } else { " House" }, SemanticGroup::Objects, 0.9))
            .collect();
        records.push(rec("building", SemanticGroup::Objects, 0.74));
        records.push(rec("building", SemanticGroup::Scenes, 0.9));
        records.push(rec("gizmo", SemanticGroup::Objects, 0.9));
        let c = unit_object_counts(&records, &mapping, 0.75, &[SemanticGroup::Objects]);
        assert_eq!(c.counts, vec![("building".to_string(), 15)]);
        assert_eq!(c.unmapped.len(), 1);
        assert_eq!(c.unmapped[0].1, "gizmo");
    }

    #[test]
    fn correlation_fills_missing_with_zero() {
        let x = vec![("a".to_string(), 3), ("b".to_string(), 2), ("c".to_string(), 1)];
        let y = vec![("a".to_string(), 5), ("b".to_string(), 1)];
        let c = correlate("freq", &x, "units", &y).unwrap();
        assert_eq!(c.ys, vec![5.0, 1.0, 0.0]);
        assert!(c.r > 0.0 && c.r <= 1.0);
    }
}
