use std::collections::HashMap;
use std::time::Instant;

use anyhow::bail;
use clap::Args;
use scopelens::annotation::{AnnotationService, ImageSource, RecordStore, Submission, UnitResponse};
use scopelens::metrics::{jaccard, pearson, pr_ap};
use scopelens::net::spec::NetworkSpec;
use scopelens::rfest::{estimate_unit, occluder_grid, rf_size, RFEstimationConfig};
use scopelens::simplify::poisson_fill;
use scopelens::synthetic::{planted_dataset, planted_detector, planted_unit, texture_classifier, PLANTED_SIDE, TEXTURE_SIDE};
use scopelens::{theoretical_rf, Image, Mask, Rng, Unit};
use serde::Serialize;

use crate::output::Output;
use crate::Global;

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Skip the occlusion check, the only one that takes more than a moment.
    #[arg(long)]
    pub quick: bool,
}

#[derive(Debug, Serialize)]
struct CheckResult {
    name: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

type Check = fn(u64) -> anyhow::Result<(bool, String)>;

fn rf_table(_: u64) -> anyhow::Result<(bool, String)> {
    let spec = NetworkSpec::parse(NetworkSpec::bundled_json())?;
    let mut sizes = Vec::new();
    for layer in ["pool1", "pool2", "conv3", "conv4", "pool5"] {
        sizes.push(theoretical_rf(&spec, layer)?.size);
    }
    Ok((sizes == [19, 67, 99, 131, 195], format!("{sizes:?}")))
}

fn softmax(seed: u64) -> anyhow::Result<(bool, String)> {
    let net = texture_classifier(TEXTURE_SIDE)?;
    let mut rng = Rng::new(seed);
    let pixels = (0..TEXTURE_SIDE * TEXTURE_SIDE)
        .map(|_| [rng.next_u8(), rng.next_u8(), rng.next_u8()])
        .collect();
    let probs = net.classify(&Image::new(TEXTURE_SIDE, TEXTURE_SIDE, pixels)?)?;
    let sum: f32 = probs.iter().sum();
    let ok = probs.iter().all(|&p| (0.0..=1.0).contains(&p)) && (sum - 1.0).abs() <= 1e-5;
    Ok((ok, format!("{} probabilities summing to {sum:.7}", probs.len())))
}

fn occluders(_: u64) -> anyhow::Result<(bool, String)> {
    let n = occluder_grid(227, 11, 3)?.len();
    Ok((n == 5329, format!("{n} positions")))
}

fn poisson(_: u64) -> anyhow::Result<(bool, String)> {
    let img = Image::filled(24, 24, [31, 160, 222]);
    let mut mask = Mask::new(24, 24);
    mask.fill_box(4, 4, 19, 19);
    let out = poisson_fill(&img, &mask)?;
    Ok((out == img, "constant boundary fills to the constant".into()))
}

fn metric_values(_: u64) -> anyhow::Result<(bool, String)> {
    let a = Mask::from_bits(4, 1, vec![true, true, false, false])?;
    let b = Mask::from_bits(4, 1, vec![false, true, true, false])?;
    let j = jaccard(&a, &b)?;
    let r = pearson(&[1.0, 2.0, 3.0], &[-2.0, -4.0, -6.0])?;
    let ap = pr_ap(&[0.9, 0.8, 0.7], &[true, false, true])?.average_precision;
    let ok = (j - 1.0 / 3.0).abs() < 1e-12 && (r + 1.0).abs() < 1e-12 && (ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12;
    Ok((ok, format!("jaccard {j:.4}, pearson {r:.4}, AP {ap:.4}")))
}

struct Blank;

impl ImageSource for Blank {
    fn render(&self, _: &Unit, _: usize) -> scopelens::Result<Image> {
        Ok(Image::filled(1, 1, [0; 3]))
    }
}

fn annotation(seed: u64) -> anyhow::Result<(bool, String)> {
    let unit = Unit::new("conv5", 0);
    let responses: Vec<UnitResponse> = (0..70)
        .map(|i| UnitResponse {
            image_id: i,
            score: i as f32,
            negative_score: Some(i as f32 - 100.0),
        })
        .collect();
    let svc = AnnotationService::new(HashMap::from([(unit.clone(), responses)]), Box::new(Blank), RecordStore::in_memory());
    let task = svc.task(&unit, seed)?;
    // the three lowest pre-activations belong to images 0, 1 and 2
    let planted: Vec<usize> = task
        .entries
        .iter()
        .filter(|e| ["-0", "-1", "-2"].iter().any(|s| e.image.ends_with(s)))
        .map(|e| e.index)
        .collect();
    let mut rejected = planted.clone();
    rejected.extend((0..task.entries.len()).filter(|i| !planted.contains(i)).take(15));
    let record = svc
        .submit(&Submission {
            task_id: task.task_id,
            annotator: "selftest".into(),
            concept: "thing".into(),
            category: "objects".into(),
            rejected,
        })
        .map_err(|e| anyhow::anyhow!(e))?;
    Ok((record.precision == 0.75, format!("precision {:.2} with 15 positives rejected", record.precision)))
}

fn planted_rf(seed: u64) -> anyhow::Result<(bool, String)> {
    let net = planted_detector(PLANTED_SIDE, false)?;
    let data: Vec<_> = planted_dataset(seed, PLANTED_SIDE, 12)
        .iter()
        .enumerate()
        .map(|(i, p)| (i, net.preprocess(&p.image)))
        .collect();
    let config = RFEstimationConfig {
        k: 6,
        seed,
        ..Default::default()
    };
    let unit = planted_unit();
    let est = estimate_unit(&net, &unit, &data, &config)?;
    let empirical = rf_size(&est.rf.canvas, 0.5)?;
    let theoretical = theoretical_rf(net.spec(), &unit.layer)?.size;
    Ok((
        empirical <= theoretical as f64,
        format!("empirical {empirical:.2} within theoretical {theoretical}"),
    ))
}

pub fn run(g: &Global, a: &SelftestArgs) -> anyhow::Result<()> {
    let mut checks: Vec<(&'static str, Check)> = vec![
        ("theoretical receptive fields", rf_table),
        ("softmax output", softmax),
        ("occluder grid", occluders),
        ("poisson constant fill", poisson),
        ("metric values", metric_values),
        ("annotation precision", annotation),
    ];
    if !a.quick {
        checks.push(("planted empirical field", planted_rf));
    }
    let mut results = Vec::new();
    for (name, check) in checks {
        let start = Instant::now();
        let (passed, detail) = match check(g.seed) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        let seconds = start.elapsed().as_secs_f64();
        println!("{} {name}: {detail}", if passed { "ok  " } else { "FAIL" });
        results.push(CheckResult {
            name,
            passed,
            detail,
            seconds,
        });
    }
    let mut out = Output::create(&g.out)?;
    out.json("selftest.json", &results)?;
    out.finish();
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} self-test check(s) failed");
    }
    Ok(())
}
