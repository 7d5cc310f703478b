use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use scopelens::image::encode_ppm;
use scopelens::simplify::{greedy_simplify, FillOptions, SimplifyOptions};
use scopelens::{Image, SegmentMap};
use serde::Serialize;

use crate::data::load_network;
use crate::output::Output;
use crate::Global;

#[derive(Debug, Args)]
pub struct SimplifyArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Label image (PGM or 16-bit PNG) with segment ids 0..L.
    #[arg(long)]
    pub segments: PathBuf,
    /// JSON object mapping segment ids to object names.
    #[arg(long)]
    pub names: Option<PathBuf>,
    /// Class index or label to preserve; defaults to the top-1 class.
    #[arg(long)]
    pub target: Option<String>,
    /// Relative residual at which each fill stops.
    #[arg(long, default_value_t = FillOptions::default().tolerance)]
    pub tolerance: f64,
}

#[derive(Debug, Serialize)]
struct StepRow {
    step: usize,
    label: u16,
    name: String,
    score: f32,
}

pub fn run(g: &Global, a: &SimplifyArgs) -> anyhow::Result<()> {
    let net = load_network(g)?;
    let img = Image::load(&a.image).with_context(|| format!("loading {}", a.image.display()))?;
    let segments = SegmentMap::load(&a.segments, a.names.as_deref())?;
    let probs = net.classify(&img)?;
    let target = match &a.target {
        None => (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b }),
        Some(t) => match t.parse::<usize>() {
            Ok(i) => i,
            Err(_) => (0..probs.len())
                .find(|&i| net.spec().label(i) == *t)
                .ok_or_else(|| anyhow!("no class labelled `{t}`"))?,
        },
    };
    let opts = SimplifyOptions {
        fill: FillOptions {
            tolerance: a.tolerance,
            ..FillOptions::default()
        },
    };
    let trace = greedy_simplify(&net, &img, &segments, target, &opts)?;
    let name = |l: u16| segments.name(l).map(str::to_string).unwrap_or_else(|| format!("segment{l}"));

    println!(
        "target {} ({}), score {:.4} with {} segments",
        target,
        net.spec().label(target),
        trace.initial_score,
        segments.segment_count()
    );
    let rows: Vec<StepRow> = trace
        .removals
        .iter()
        .enumerate()
        .map(|(i, r)| StepRow {
            step: i + 1,
            label: r.label,
            name: name(r.label),
            score: r.score,
        })
        .collect();
    for r in &rows {
        println!("  step {:>3}: removed {:<16} score {:.4}", r.step, r.name, r.score);
    }
    let kept: Vec<String> = trace.retained.iter().map(|&l| name(l)).collect();
    println!("kept {} segments: {}", kept.len(), kept.join(", "));

    let mut out = Output::create(&g.out)?;
    out.bytes("simplified.ppm", &encode_ppm(&trace.final_image))?;
    out.csv("simplify_steps.csv", &rows)?;
    out.json(
        "simplify.json",
        &serde_json::json!({
            "image": a.image.display().to_string(),
            "target_label": net.spec().label(target),
            "trace": trace,
        }),
    )?;
    out.finish();
    Ok(())
}
