use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use scopelens::annotation::{read_records, semantics_distribution, DEFAULT_MIN_PRECISION};
use scopelens::emergence::{correlate, informative_objects, load_dataset, object_frequency, unit_object_counts, TagMapping};
use scopelens::SemanticGroup;
use serde::Serialize;

use crate::output::Output;
use crate::Global;

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Annotated-scene index JSON; defaults to --dataset.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Annotation store (newline-delimited records).
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Concept-to-object-class JSON.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_PRECISION)]
    pub min_precision: f64,
    /// Semantic groups whose units are counted per object class.
    #[arg(long, value_delimiter = ',', default_value = "objects")]
    pub categories: Vec<SemanticGroup>,
}

#[derive(Debug, Serialize)]
struct CountRow<'a> {
    class: &'a str,
    count: usize,
}

fn count_rows(counts: &[(String, usize)]) -> Vec<CountRow<'_>> {
    counts.iter().map(|(class, count)| CountRow { class, count: *count }).collect()
}

fn print_counts(title: &str, counts: &[(String, usize)]) {
    println!("{title}:");
    for (class, n) in counts {
        println!("  {class:<20} {n}");
    }
}

pub fn run(g: &Global, a: &AnalyzeArgs) -> anyhow::Result<()> {
    let index = a
        .index
        .as_deref()
        .or(g.dataset.as_deref())
        .ok_or_else(|| anyhow!("give --index or --dataset"))?;
    let dataset = load_dataset(index)?;
    let frequency = object_frequency(&dataset)?;
    let informative = informative_objects(&dataset)?;
    print_counts("object instances per class", &frequency);
    println!("most informative object per scene ({}):", informative.metric);
    for (scene, class) in &informative.winners {
        println!("  {scene:<20} {class}");
    }

    let mut out = Output::create(&g.out)?;
    out.csv("object_frequency.csv", &count_rows(&frequency))?;
    out.csv("informative_objects.csv", &count_rows(&informative.counts))?;
    out.csv("scene_object_ap.csv", &informative.table)?;
    let mut summary = serde_json::json!({
        "images": dataset.len(),
        "object_frequency": frequency,
        "informative_objects": informative,
    });

    if let Some(path) = &a.records {
        let records = read_records(path)?;
        let layers: BTreeSet<&str> = records.iter().map(|r| r.unit.layer.as_str()).collect();
        let mut header = vec!["layer".to_string(), "units".into(), "passing".into(), "mean_precision".into()];
        header.extend(SemanticGroup::ALL.iter().map(|g| g.to_string()));
        let mut rows = Vec::new();
        let mut dists = Vec::new();
        println!("semantic groups per layer (precision >= {}):", a.min_precision);
        for layer in layers {
            let d = semantics_distribution(&records, layer, a.min_precision);
            let pct: Vec<String> = d.percentages.iter().map(|p| format!("{p:.1}")).collect();
            println!("  {layer:<8} {} of {} units  [{}]", d.units_passing, d.units_total, pct.join(", "));
            let mut row = vec![
                layer.to_string(),
                d.units_total.to_string(),
                d.units_passing.to_string(),
                format!("{:.4}", d.mean_precision),
            ];
            row.extend(d.percentages.iter().map(|p| format!("{p:.4}")));
            rows.push(row);
            dists.push(d);
        }
        out.table("semantics.csv", &header, &rows)?;
        summary["semantics"] = serde_json::to_value(&dists)?;

        if let Some(mapping) = &a.mapping {
            let mapping = TagMapping::load(mapping)?;
            let units = unit_object_counts(&records, &mapping, a.min_precision, &a.categories);
            print_counts("units per object class", &units.counts);
            if !units.unmapped.is_empty() {
                println!("  ({} passing units have unmapped concepts)", units.unmapped.len());
            }
            out.csv("unit_counts.csv", &count_rows(&units.counts))?;
            let mut correlations = Vec::new();
            for (name, table) in [
                ("object frequency", &frequency),
                ("informative objects", &informative.counts),
            ] {
                match correlate(name, table, "units", &units.counts) {
                    Ok(c) => {
                        println!("correlation of {name} with unit counts: r = {:.4}", c.r);
                        correlations.push(c);
                    }
                    Err(e) => println!("correlation of {name} with unit counts: undefined ({e})"),
                }
            }
            summary["unit_counts"] = serde_json::to_value(&units)?;
            summary["correlations"] = serde_json::to_value(&correlations)?;
        }
    }
    out.json("analysis.json", &summary)?;
    out.finish();
    Ok(())
}
