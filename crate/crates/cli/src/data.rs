//! Loading networks, image sets, unit tags, thresholds and ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use scopelens::annotation::read_records;
use scopelens::net::spec::NetworkSpec;
use scopelens::segmenter::calibrate_thresholds;
use scopelens::synthetic::{planted_detector, texture_classifier, PLANTED_SIDE, TEXTURE_SIDE};
use scopelens::{Image, LabelImage, Mask, Network, PixelBox, Rng, Tensor, Unit, UnitTag, WeightStore};
use serde::Deserialize;

use crate::Global;

pub const BUILTIN_NETS: [&str; 3] = ["places-alexnet", "planted", "texture"];

/// Build the network named by `--net`, with weights from `--weights` or a
/// seeded random initialisation.
pub fn load_network(g: &Global) -> anyhow::Result<Network> {
    let synthetic = match g.net.as_str() {
        "planted" => Some(planted_detector(PLANTED_SIDE, true)?),
        "texture" => Some(texture_classifier(TEXTURE_SIDE)?),
        _ => None,
    };
    if let Some(net) = synthetic {
        if g.weights.is_some() {
            bail!("built-in network `{}` carries its own weights; drop --weights", g.net);
        }
        return Ok(net);
    }
    let spec = if g.net == "places-alexnet" {
        NetworkSpec::parse(NetworkSpec::bundled_json())?
    } else {
        NetworkSpec::load(&g.net).with_context(|| format!("loading network spec {}", g.net))?
    };
    let weights = match &g.weights {
        Some(path) => WeightStore::load(path, &spec)?,
        None => {
            eprintln!("note: no --weights given, using random weights from seed {}", g.seed);
            WeightStore::random(&spec, &mut Rng::new(g.seed))
        }
    };
    Ok(Network::new(spec, weights)?)
}

/// The architecture alone, without building weights.
pub fn load_spec(g: &Global) -> anyhow::Result<NetworkSpec> {
    match g.net.as_str() {
        "places-alexnet" => Ok(NetworkSpec::parse(NetworkSpec::bundled_json())?),
        "planted" | "texture" => Ok(load_network(g)?.spec().clone()),
        path => NetworkSpec::load(path).with_context(|| format!("loading network spec {path}")),
    }
}

#[derive(Debug, Deserialize)]
struct IndexEntry {
    image: String,
    #[serde(default)]
    mask: Option<String>,
    #[serde(default)]
    classes: BTreeMap<String, String>,
}

fn read_index(path: &Path) -> anyhow::Result<(PathBuf, Vec<IndexEntry>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let entries = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((path.parent().unwrap_or(Path::new("")).to_path_buf(), entries))
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "png")
    )
}

/// `(name, image)` pairs. A directory is read in file-name order; an index
/// JSON in listed order.
pub fn load_images(path: &Path) -> anyhow::Result<Vec<(String, Image)>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        files
    } else {
        let (root, entries) = read_index(path)?;
        entries.into_iter().map(|e| root.join(e.image)).collect()
    };
    if files.is_empty() {
        bail!("no images found in {}", path.display());
    }
    files
        .into_iter()
        .map(|f| {
            let img = Image::load(&f)?;
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, img))
        })
        .collect()
}

pub fn require_dataset(g: &Global) -> anyhow::Result<&Path> {
    g.dataset
        .as_deref()
        .ok_or_else(|| anyhow!("this command needs --dataset"))
}

/// Preprocessed dataset with ids in load order.
pub fn preprocess_all(net: &Network, images: &[(String, Image)]) -> Vec<(usize, Tensor)> {
    use rayon::prelude::*;
    images
        .par_iter()
        .enumerate()
        .map(|(i, (_, img))| (i, net.preprocess(img)))
        .collect()
}

/// Unit tags from a JSON array of tags, or from an annotation store
/// (newline-delimited records) filtered by precision.
pub fn load_tags(path: &Path, min_precision: f64) -> anyhow::Result<Vec<UnitTag>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(tags) = serde_json::from_str::<Vec<UnitTag>>(&text) {
        return Ok(tags);
    }
    let records = read_records(path).with_context(|| format!("{} is neither a tag list nor an annotation store", path.display()))?;
    records
        .into_iter()
        .filter(|r| r.precision >= min_precision)
        .map(|r| UnitTag::new(r.unit, r.concept, r.category, r.precision).map_err(Into::into))
        .collect()
}

/// Thresholds from a `{"layer:channel": value}` file, or calibrated on the
/// dataset at quantile `q`.
pub fn thresholds(
    net: &Network,
    units: &[Unit],
    file: Option<&Path>,
    g: &Global,
    q: f64,
) -> anyhow::Result<Vec<f32>> {
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let map: BTreeMap<String, f32> = serde_json::from_str(&text)?;
        return units
            .iter()
            .map(|u| {
                map.get(&u.to_string())
                    .copied()
                    .ok_or_else(|| anyhow!("{} has no threshold for {u}", path.display()))
            })
            .collect();
    }
    let Some(dataset) = g.dataset.as_deref() else {
        bail!("give --thresholds or a --dataset to calibrate on");
    };
    let images = load_images(dataset)?;
    let tensors: Vec<Tensor> = preprocess_all(net, &images).into_iter().map(|(_, t)| t).collect();
    Ok(calibrate_thresholds(net, units, &tensors, q)?)
}

/// One ground-truth image: per-class union masks and per-instance boxes.
pub struct TruthImage {
    pub name: String,
    pub image: Image,
    pub masks: BTreeMap<String, Mask>,
    pub boxes: BTreeMap<String, Vec<PixelBox>>,
}

/// Index JSON entries with `image`, `mask` (label image) and `classes`
/// (label id to class name). Label 0 is background unless listed.
pub fn load_truth(path: &Path) -> anyhow::Result<Vec<TruthImage>> {
    let (root, entries) = read_index(path)?;
    entries
        .into_iter()
        .map(|e| {
            let image = Image::load(root.join(&e.image))?;
            let mask_path = e.mask.ok_or_else(|| anyhow!("{}: entry without a mask", e.image))?;
            let labels = LabelImage::load(root.join(&mask_path))?;
            if (labels.width, labels.height) != (image.width(), image.height()) {
                bail!("{}: mask size differs from the image", e.image);
            }
            let mut masks: BTreeMap<String, Mask> = BTreeMap::new();
            let mut extents: BTreeMap<u16, (String, PixelBox)> = BTreeMap::new();
            for (id, class) in &e.classes {
                let id: u16 = id.parse().map_err(|_| anyhow!("{}: label id `{id}`", e.image))?;
                masks.entry(class.clone()).or_insert_with(|| Mask::new(labels.width, labels.height));
                for (i, _) in labels.labels.iter().enumerate().filter(|(_, &l)| l == id) {
                    let (x, y) = (i % labels.width, i / labels.width);
                    masks.get_mut(class).unwrap().set(x, y, true);
                    let b = PixelBox { x0: x, y0: y, x1: x, y1: y };
                    extents
                        .entry(id)
                        .and_modify(|(_, e)| *e = e.union(&b))
                        .or_insert((class.clone(), b));
                }
            }
            let mut boxes: BTreeMap<String, Vec<PixelBox>> = BTreeMap::new();
            for (_, (class, b)) in extents {
                boxes.entry(class).or_default().push(b);
            }
            Ok(TruthImage {
                name: e.image,
                image,
                masks,
                boxes,
            })
        })
        .collect()
}

pub fn parse_unit(s: &str) -> Result<Unit, String> {
    s.parse::<Unit>().map_err(|e| e.to_string())
}
