use std::collections::BTreeMap;

use clap::{Args, ValueEnum};
use scopelens::annotation::{AnnotationRecord, POSITIVES};
use scopelens::image::{encode_pgm, encode_ppm};
use scopelens::synthetic::{emergence_dataset, planted_dataset, planted_unit, textured_scene, PLANTED_SIDE, TEXTURE_SIDE};
use scopelens::{Image, Rng, SemanticGroup, Unit, UnitTag};
use serde::Serialize;

use crate::output::Output;
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Noise images with a planted pattern, masks and a tag for the `planted` net.
    Planted,
    /// Grid-segmented texture images for `simplify` with the `texture` net.
    Texture,
    /// Annotated scenes plus an annotation store for `analyze`.
    Scenes,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Segments per side for texture images.
    #[arg(long, default_value_t = 3)]
    pub grid: usize,
}

#[derive(Debug, Serialize)]
struct IndexEntry {
    image: String,
    scene: String,
    mask: String,
    classes: BTreeMap<String, String>,
}

const STYLE_NAMES: [&str; 5] = ["red", "green", "blue", "plain", "gradient"];

pub fn run(g: &Global, a: &GenerateArgs) -> anyhow::Result<()> {
    let mut out = Output::create(&g.out)?;
    match a.kind {
        Kind::Planted => planted(g.seed, a.count, &mut out)?,
        Kind::Texture => texture(g.seed, a.count, a.grid, &mut out)?,
        Kind::Scenes => scenes(g.seed, a.count, &mut out)?,
    }
    out.finish();
    Ok(())
}

fn planted(seed: u64, count: usize, out: &mut Output) -> anyhow::Result<()> {
    let side = PLANTED_SIDE;
    let mut index = Vec::with_capacity(count);
    let mut patterns = 0;
    for (i, p) in planted_dataset(seed, side, count).iter().enumerate() {
        let mut labels = vec![0u16; side * side];
        let mut classes = BTreeMap::new();
        for (j, b) in p.boxes.iter().enumerate() {
            let id = j as u16 + 1;
            for y in b.y0..=b.y1 {
                labels[y * side + b.x0..=y * side + b.x1].fill(id);
            }
            classes.insert(id.to_string(), "pattern".to_string());
        }
        patterns += p.boxes.len();
        let (image, mask) = (format!("images/{i:04}.ppm"), format!("masks/{i:04}.pgm"));
        out.bytes(&image, &encode_ppm(&p.image))?;
        out.bytes(&mask, &encode_pgm(side, side, 65535, &labels))?;
        index.push(IndexEntry {
            image,
            scene: "synthetic".into(),
            mask,
            classes,
        });
    }
    out.json("index.json", &index)?;
    out.json(
        "tags.json",
        &[UnitTag::new(planted_unit(), "pattern", SemanticGroup::Objects, 1.0)?],
    )?;
    println!("{count} images of {side}x{side} with {patterns} planted patterns");
    Ok(())
}

fn texture(seed: u64, count: usize, grid: usize, out: &mut Output) -> anyhow::Result<()> {
    anyhow::ensure!(grid >= 1 && grid <= TEXTURE_SIDE, "--grid must be in 1..={TEXTURE_SIDE}");
    let mut rng = Rng::new(seed);
    for i in 0..count {
        let (img, segs, styles) = textured_scene(&mut rng, TEXTURE_SIDE, grid);
        let names: BTreeMap<String, &str> = styles
            .iter()
            .enumerate()
            .map(|(l, &s)| (l.to_string(), STYLE_NAMES[s as usize]))
            .collect();
        out.bytes(&format!("scene-{i:03}.ppm"), &encode_ppm(&img))?;
        out.bytes(
            &format!("scene-{i:03}-segments.pgm"),
            &encode_pgm(TEXTURE_SIDE, TEXTURE_SIDE, 65535, segs.labels()),
        )?;
        out.json(&format!("scene-{i:03}-names.json"), &names)?;
    }
    println!("{count} texture images with {grid}x{grid} segments");
    Ok(())
}

const CLASS_COLORS: [(&str, [u8; 3]); 4] = [
    ("wall", [200, 190, 170]),
    ("bed", [150, 60, 60]),
    ("stove", [90, 90, 100]),
    ("car", [40, 80, 200]),
];

/// Concepts annotators might type, with the class each maps to.
const CONCEPTS: [(&str, &str); 7] = [
    ("wall", "wall"),
    ("walls", "wall"),
    ("bed", "bed"),
    ("stove", "stove"),
    ("oven", "stove"),
    ("car", "car"),
    ("cars", "car"),
];

fn scenes(seed: u64, count: usize, out: &mut Output) -> anyhow::Result<()> {
    let dataset = emergence_dataset(seed, count);
    let mut index = Vec::with_capacity(dataset.len());
    for img in &dataset {
        let (w, h) = (img.width, img.height);
        let mut labels = vec![0u16; w * h];
        let mut pixels = vec![[16u8, 16, 16]; w * h];
        let mut at = 0;
        let mut classes = BTreeMap::new();
        for inst in &img.instances {
            let color = CLASS_COLORS
                .iter()
                .find(|(c, _)| *c == inst.class)
                .map_or([128; 3], |(_, rgb)| *rgb);
            labels[at..at + inst.pixels].fill(inst.label_id);
            pixels[at..at + inst.pixels].fill(color);
            at += inst.pixels;
            if inst.pixels > 0 {
                classes.insert(inst.label_id.to_string(), inst.class.clone());
            }
        }
        let (image, mask) = (format!("images/{}.ppm", img.id), format!("masks/{}.pgm", img.id));
        out.bytes(&image, &encode_ppm(&Image::new(w, h, pixels)?))?;
        out.bytes(&mask, &encode_pgm(w, h, 65535, &labels))?;
        index.push(IndexEntry {
            image,
            scene: img.scene.clone(),
            mask,
            classes,
        });
    }
    out.json("index.json", &index)?;

    let mut rng = Rng::new(seed ^ 0xA11CE);
    let mut store = String::new();
    for (layer, units) in [("conv4", 24), ("conv5", 32)] {
        for ch in 0..units {
            let (concept, _) = CONCEPTS[rng.below(CONCEPTS.len() as u64) as usize];
            let group = SemanticGroup::ALL[rng.below(6) as usize];
            let rejected_positives = rng.below(POSITIVES as u64 / 2) as usize;
            let record = AnnotationRecord {
                task_id: format!("{layer}:{ch}#0"),
                unit: Unit::new(layer, ch),
                concept: concept.to_string(),
                category: if rng.below(2) == 0 { SemanticGroup::Objects } else { group },
                rejected: (0..rejected_positives).collect(),
                rejected_positives,
                precision: (POSITIVES - rejected_positives) as f64 / POSITIVES as f64,
                timestamp: 0,
                annotator: "generated".into(),
            };
            store.push_str(&serde_json::to_string(&record)?);
            store.push('\n');
        }
    }
    out.bytes("records.ndjson", store.as_bytes())?;
    let mapping: BTreeMap<&str, &str> = CONCEPTS.into_iter().collect();
    out.json("mapping.json", &mapping)?;
    println!("{} annotated scene images, 56 annotated units", dataset.len());
    Ok(())
}
