use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::Args;
use scopelens::emergence::TagMapping;
use scopelens::segmenter::{
    evaluate_localization, report as scene_report, segment as segment_units, LocalizationSample, DEFAULT_QUANTILE,
};
use scopelens::{Image, Mask, Unit, UnitTag};
use serde::Serialize;

use crate::data::{load_network, load_tags, load_truth, parse_unit, thresholds};
use crate::output::Output;
use crate::Global;

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// JSON object `{"layer:channel": threshold}`; otherwise calibrated on --dataset.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Activation quantile used when calibrating.
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    pub quantile: f64,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_unit)]
    pub units: Vec<Unit>,
    #[command(flatten)]
    pub thr: ThresholdArgs,
}

#[derive(Debug, Serialize)]
struct BoxOut {
    #[serde(rename = "box")]
    bbox: scopelens::PixelBox,
    score: f32,
}

#[derive(Debug, Serialize)]
struct UnitMaskOut {
    unit: String,
    threshold: f32,
    mask_file: String,
    mask_pixels: usize,
    detections: Vec<BoxOut>,
}

pub fn segment(g: &Global, a: &SegmentArgs) -> anyhow::Result<()> {
    let net = load_network(g)?;
    let img = Image::load(&a.image).with_context(|| format!("loading {}", a.image.display()))?;
    let thr = thresholds(&net, &a.units, a.thr.thresholds.as_deref(), g, a.thr.quantile)?;
    let segs = segment_units(&net, &net.preprocess(&img), &a.units, &thr)?;
    let (w, h, side) = (img.width(), img.height(), net.side());
    let mut out = Output::create(&g.out)?;
    let mut rows = Vec::new();
    for (seg, t) in segs.iter().zip(&thr) {
        let mask = seg.mask.resized(w, h);
        let file = format!("masks/{}-{}.pgm", seg.unit.layer, seg.unit.channel);
        out.bytes(&file, &mask.to_pgm())?;
        let detections: Vec<BoxOut> = seg
            .detections
            .iter()
            .map(|d| BoxOut {
                bbox: d.bbox.rescale(side, w, h),
                score: d.score,
            })
            .collect();
        println!(
            "{:<12} threshold {:.4}  {} pixels  {} detections",
            seg.unit.to_string(),
            t,
            mask.count(),
            detections.len()
        );
        for d in &detections {
            let b = &d.bbox;
            println!("    [{}, {}]-[{}, {}] score {:.4}", b.x0, b.y0, b.x1, b.y1, d.score);
        }
        rows.push(UnitMaskOut {
            unit: seg.unit.to_string(),
            threshold: *t,
            mask_file: file,
            mask_pixels: mask.count(),
            detections,
        });
    }
    out.json("segment.json", &rows)?;
    out.finish();
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Tag list JSON, or an annotation store whose records become tags.
    #[arg(long)]
    pub tags: PathBuf,
    /// Records below this precision are not used as tags.
    #[arg(long, default_value_t = scopelens::annotation::DEFAULT_MIN_PRECISION)]
    pub min_precision: f64,
    /// Scene classes to list.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[command(flatten)]
    pub thr: ThresholdArgs,
}

pub fn report(g: &Global, a: &ReportArgs) -> anyhow::Result<()> {
    let net = load_network(g)?;
    let img = Image::load(&a.image).with_context(|| format!("loading {}", a.image.display()))?;
    let tags = load_tags(&a.tags, a.min_precision)?;
    if tags.is_empty() {
        bail!("{} yields no unit tags", a.tags.display());
    }
    let units: Vec<Unit> = tags.iter().map(|t| t.unit.clone()).collect();
    let thr = thresholds(&net, &units, a.thr.thresholds.as_deref(), g, a.thr.quantile)?;
    let requests: Vec<(Unit, f32)> = units.into_iter().zip(thr).collect();
    let rep = scene_report(&net, &tags, &requests, &img, a.top)?;
    println!("scenes:");
    for s in &rep.scenes {
        println!("  {:<24} {:.4}", s.label, s.prob);
    }
    println!("detections:");
    for d in &rep.detections {
        let b = &d.bbox;
        println!(
            "  {:<16} {}:{:<4} [{}, {}]-[{}, {}] score {:.4}",
            d.tag, d.layer, d.channel, b.x0, b.y0, b.x1, b.y1, d.score
        );
    }
    let mut out = Output::create(&g.out)?;
    out.json("report.json", &rep)?;
    out.finish();
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalSegArgs {
    /// Ground-truth index JSON (`image`, `mask`, `classes`); defaults to --dataset.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub tags: PathBuf,
    #[arg(long, default_value_t = scopelens::annotation::DEFAULT_MIN_PRECISION)]
    pub min_precision: f64,
    /// Concept-to-class JSON; without it a tag's concept is its class.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// IoU needed for a detection to match a ground-truth box.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[command(flatten)]
    pub thr: ThresholdArgs,
}

#[derive(Debug, Serialize)]
struct ClassEval {
    class: String,
    units: usize,
    average_precision: f64,
    mean_jaccard: f64,
    images: usize,
    images_with_truth: usize,
    detections: usize,
    truth_boxes: usize,
}

pub fn eval_seg(g: &Global, a: &EvalSegArgs) -> anyhow::Result<()> {
    let truth_path = a
        .truth
        .as_deref()
        .or(g.dataset.as_deref())
        .ok_or_else(|| anyhow!("give --truth or --dataset"))?;
    let net = load_network(g)?;
    let truth = load_truth(truth_path)?;
    let tags = load_tags(&a.tags, a.min_precision)?;
    let mapping = a.mapping.as_deref().map(TagMapping::load).transpose()?;
    let class_of = |t: &UnitTag| match &mapping {
        Some(m) => m.get(&t.concept).map(str::to_string),
        None => Some(t.concept.trim().to_lowercase()),
    };
    // class -> indices into `units`
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut units = Vec::new();
    for t in &tags {
        if let Some(c) = class_of(t) {
            by_class.entry(c).or_default().push(units.len());
            units.push(t.unit.clone());
        }
    }
    if units.is_empty() {
        bail!("no tag maps to a class");
    }
    let fallback = Global {
        dataset: Some(truth_path.to_path_buf()),
        ..g.clone()
    };
    let thr = thresholds(&net, &units, a.thr.thresholds.as_deref(), &fallback, a.thr.quantile)?;
    let side = net.side();

    let mut samples: BTreeMap<&str, Vec<LocalizationSample>> = BTreeMap::new();
    for t in &truth {
        let (w, h) = (t.image.width(), t.image.height());
        let segs = segment_units(&net, &net.preprocess(&t.image), &units, &thr)?;
        for (class, idx) in &by_class {
            let mut predicted = Mask::new(w, h);
            let mut detections = Vec::new();
            for &i in idx {
                let m = segs[i].mask.resized(w, h);
                for (p, &b) in m.bits().iter().enumerate() {
                    if b {
                        predicted.set(p % w, p / w, true);
                    }
                }
                detections.extend(segs[i].detections.iter().map(|d| (d.score, d.bbox.rescale(side, w, h))));
            }
            samples.entry(class.as_str()).or_default().push(LocalizationSample {
                predicted_mask: predicted,
                detections,
                truth_mask: t.masks.get(class).cloned().unwrap_or_else(|| Mask::new(w, h)),
                truth_boxes: t.boxes.get(class).cloned().unwrap_or_default(),
            });
        }
    }

    let mut rows = Vec::new();
    for (class, s) in &samples {
        if s.iter().all(|x| x.truth_boxes.is_empty()) {
            println!("{class:<16} no ground truth, skipped");
            continue;
        }
        let e = evaluate_localization(s, a.iou)?;
        println!(
            "{:<16} AP {:.4}  mean Jaccard {:.4}  ({} detections, {} truth boxes)",
            class, e.average_precision, e.mean_jaccard, e.detections, e.truth_boxes
        );
        rows.push(ClassEval {
            class: class.to_string(),
            units: by_class[*class].len(),
            average_precision: e.average_precision,
            mean_jaccard: e.mean_jaccard,
            images: e.images,
            images_with_truth: e.images_with_truth,
            detections: e.detections,
            truth_boxes: e.truth_boxes,
        });
    }
    let mut out = Output::create(&g.out)?;
    out.csv("eval_seg.csv", &rows)?;
    out.json(
        "eval_seg.json",
        &serde_json::json!({ "iou_threshold": a.iou, "classes": rows }),
    )?;
    out.finish();
    Ok(())
}
