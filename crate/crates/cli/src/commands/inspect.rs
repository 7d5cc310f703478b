use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use scopelens::net::RankMode;
use scopelens::rfest::{estimate_unit, rf_size, size_stats, FillMode, RFEstimationConfig, DEFAULT_K, DEFAULT_PATCH, DEFAULT_STRIDE};
use scopelens::{theoretical_rf, Image, Unit};
use serde::Serialize;

use crate::data::{load_images, load_network, load_spec, parse_unit, preprocess_all, require_dataset};
use crate::output::Output;
use crate::Global;

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

#[derive(Debug, Serialize)]
struct ClassProb {
    rank: usize,
    class: usize,
    label: String,
    prob: f32,
}

#[derive(Debug, Serialize)]
struct ForwardReport<'a> {
    image: String,
    net: &'a str,
    top: Vec<ClassProb>,
}

pub fn forward(g: &Global, a: &ForwardArgs) -> anyhow::Result<()> {
    if a.top == 0 {
        bail!("--top must be at least 1");
    }
    let net = load_network(g)?;
    let img = Image::load(&a.image).with_context(|| format!("loading {}", a.image.display()))?;
    let probs = net.classify(&img)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&x, &y| probs[y].total_cmp(&probs[x]).then(x.cmp(&y)));
    let top: Vec<ClassProb> = order
        .into_iter()
        .take(a.top)
        .enumerate()
        .map(|(rank, class)| ClassProb {
            rank: rank + 1,
            class,
            label: net.spec().label(class),
            prob: probs[class],
        })
        .collect();
    for c in &top {
        println!("{:>3}  {:<24} {:.6}", c.rank, c.label, c.prob);
    }
    let mut out = Output::create(&g.out)?;
    out.json(
        "forward.json",
        &ForwardReport {
            image: a.image.display().to_string(),
            net: &g.net,
            top,
        },
    )?;
    out.finish();
    Ok(())
}

#[derive(Debug, Serialize)]
struct RfRow {
    layer: String,
    kind: &'static str,
    channels: usize,
    feature_size: usize,
    rf_size: usize,
    rf_stride: usize,
}

pub fn rf_theoretic(g: &Global) -> anyhow::Result<()> {
    let spec = &load_spec(g)?;
    let mut rows = Vec::new();
    for (layer, shape) in spec.layers().iter().zip(spec.shapes()) {
        if !spec.is_spatial(&layer.name)? {
            break;
        }
        let rf = theoretical_rf(spec, &layer.name)?;
        rows.push(RfRow {
            layer: layer.name.clone(),
            kind: layer.op.kind(),
            channels: shape.channels,
            feature_size: shape.height,
            rf_size: rf.size,
            rf_stride: rf.stride,
        });
    }
    println!("{:<8} {:<8} {:>8} {:>8} {:>8} {:>8}", "layer", "kind", "units", "feature", "rf", "stride");
    for r in &rows {
        println!(
            "{:<8} {:<8} {:>8} {:>8} {:>8} {:>8}",
            r.layer, r.kind, r.channels, r.feature_size, r.rf_size, r.rf_stride
        );
    }
    let mut out = Output::create(&g.out)?;
    out.csv("rf_theoretic.csv", &rows)?;
    out.json("rf_theoretic.json", &rows)?;
    out.finish();
    Ok(())
}

#[derive(Debug, Args)]
pub struct RfEstimateArgs {
    /// Units as LAYER:CHANNEL, comma separated.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_unit)]
    pub units: Vec<Unit>,
    /// Top-ranked images per unit.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Occluder side in pixels.
    #[arg(long, default_value_t = DEFAULT_PATCH)]
    pub patch: usize,
    /// Occluder step in pixels.
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
    /// uniform-random or mean-gray.
    #[arg(long, default_value = "uniform-random")]
    pub fill: FillMode,
    /// How images are ranked: max or sum of the feature map.
    #[arg(long, default_value = "max")]
    pub rank: RankMode,
    /// Fraction of the canvas peak that counts as inside the field.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Also write every discrepancy map.
    #[arg(long)]
    pub maps: bool,
}

#[derive(Debug, Serialize)]
struct UnitRow {
    unit: String,
    layer: String,
    channel: usize,
    theoretical: usize,
    /// Undefined when no occluder changed the unit's response.
    empirical: Option<f64>,
    k_used: usize,
    /// Canvas peak relative to the centre, when the field is defined.
    peak_dx: Option<i64>,
    peak_dy: Option<i64>,
}

#[derive(Debug, Serialize)]
struct LayerRow {
    layer: String,
    units: usize,
    theoretical: usize,
    mean: Option<f64>,
    std: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TopImage<'a> {
    image: &'a str,
    score: f32,
}

#[derive(Debug, Serialize)]
struct UnitDetail<'a> {
    #[serde(flatten)]
    row: &'a UnitRow,
    top_images: Vec<TopImage<'a>>,
}

pub fn rf_estimate(g: &Global, a: &RfEstimateArgs) -> anyhow::Result<()> {
    let net = load_network(g)?;
    let images = load_images(require_dataset(g)?)?;
    let dataset = preprocess_all(&net, &images);
    let config = RFEstimationConfig {
        k: a.k,
        patch: a.patch,
        stride: a.stride,
        rank_mode: a.rank,
        fill: a.fill,
        seed: g.seed,
    };
    let mut out = Output::create(&g.out)?;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for unit in &a.units {
        let est = estimate_unit(&net, unit, &dataset, &config)?;
        let theoretical = theoretical_rf(net.spec(), &unit.layer)?.size;
        let empirical = rf_size(&est.rf.canvas, a.theta).ok();
        let (px, py) = est.rf.peak();
        let c = est.rf.center() as i64;
        let stem = format!("{}-{}", unit.layer, unit.channel);
        out.bytes(&format!("rf-{stem}.pgm"), &est.rf.to_pgm())?;
        if a.maps {
            for m in &est.maps {
                out.bytes(&format!("maps/{stem}-{}.pgm", images[m.image_id].0), &m.to_pgm())?;
            }
        }
        let row = UnitRow {
            unit: unit.to_string(),
            layer: unit.layer.clone(),
            channel: unit.channel,
            theoretical,
            empirical,
            k_used: est.rf.k_used,
            peak_dx: empirical.map(|_| px as i64 - c),
            peak_dy: empirical.map(|_| py as i64 - c),
        };
        match empirical {
            Some(e) => println!(
                "{:<12} theoretical {:>4}  empirical {:>8.2}  k {:>3}  peak offset ({}, {})",
                row.unit,
                theoretical,
                e,
                row.k_used,
                px as i64 - c,
                py as i64 - c
            ),
            None => println!(
                "{:<12} theoretical {:>4}  empirical undefined (no occluder changed the response)",
                row.unit, theoretical
            ),
        }
        let top: Vec<TopImage> = est
            .ranking
            .iter()
            .map(|&(id, score)| TopImage {
                image: &images[id].0,
                score,
            })
            .collect();
        rows.push(row);
        details.push(top);
    }

    let mut layers: Vec<LayerRow> = Vec::new();
    for row in &rows {
        if layers.iter().any(|l| l.layer == row.layer) {
            continue;
        }
        let sizes: Vec<f64> = rows
            .iter()
            .filter(|r| r.layer == row.layer)
            .filter_map(|r| r.empirical)
            .collect();
        let stats = size_stats(&sizes);
        layers.push(LayerRow {
            layer: row.layer.clone(),
            units: sizes.len(),
            theoretical: row.theoretical,
            mean: stats.map(|s| s.0),
            std: stats.map(|s| s.1),
        });
    }
    for l in &layers {
        if let (Some(mean), Some(std)) = (l.mean, l.std) {
            println!(
                "{:<8} {:>3} units  theoretical {:>4}  empirical {:.2} +- {:.2}",
                l.layer, l.units, l.theoretical, mean, std
            );
        }
    }

    let units: Vec<UnitDetail> = rows
        .iter()
        .zip(details)
        .map(|(row, top_images)| UnitDetail { row, top_images })
        .collect();
    out.csv("rf_estimate.csv", &rows)?;
    out.csv("rf_layers.csv", &layers)?;
    out.json(
        "rf_estimate.json",
        &serde_json::json!({ "config": config, "theta": a.theta, "units": units, "layers": layers }),
    )?;
    out.finish();
    Ok(())
}
