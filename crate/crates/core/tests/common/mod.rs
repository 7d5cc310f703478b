//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use scopelens::image::Mask;
use scopelens::net::spec::{InputSpec, LayerOp, LayerSpec, NetworkSpec};
use scopelens::net::weights::{bias_name, kernel_name};
use scopelens::{Image, Rng, Tensor, WeightStore};

/// Dense Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Laplace equation over the masked pixels of one channel, Dirichlet data
/// from unmasked 4-neighbours, solved directly. Returns values in mask order.
pub fn dense_laplace(img: &Image, mask: &Mask, channel: usize) -> Vec<(usize, f64)> {
    let (w, h) = (img.width(), img.height());
    let idx: Vec<usize> = (0..w * h).filter(|&i| mask.bits()[i]).collect();
    let pos: std::collections::HashMap<usize, usize> = idx.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let n = idx.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (k, &i) in idx.iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let nbrs = [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        ];
        for j in nbrs.into_iter().flatten() {
            a[k][k] += 1.0;
            match pos.get(&j) {
                Some(&kk) => a[k][kk] -= 1.0,
                None => b[k] += img.pixels()[j][channel] as f64,
            }
        }
    }
    idx.into_iter().zip(solve_dense(a, b)).collect()
}

/// Image whose channels are affine ramps in x and y.
pub fn ramp_image(w: usize, h: usize) -> Image {
    let pixels = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            [
                (20.0 + 7.0 * x) as u8,
                (30.0 + 3.0 * x + 5.0 * y) as u8,
                (200.0 - 6.0 * y) as u8,
            ]
        })
        .collect();
    Image::new(w, h, pixels).unwrap()
}

/// Direct-definition forward pass in f64, one sample at a time. Returns the
/// output of every layer, channel-major.
pub fn oracle_forward(spec: &NetworkSpec, weights: &WeightStore, input: &[f32]) -> Vec<Vec<f64>> {
    let mut cur: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let mut out = Vec::new();
    for i in 0..spec.layers().len() {
        let next = oracle_layer(spec, weights, i, &cur);
        out.push(next.clone());
        cur = next;
    }
    out
}

/// One layer of the direct-definition forward pass.
pub fn oracle_layer(spec: &NetworkSpec, weights: &WeightStore, i: usize, cur: &[f64]) -> Vec<f64> {
    let layer = &spec.layers()[i];
    {
        let ins = spec.input_shape(i);
        let outs = spec.shapes()[i];
        let (c, h, w) = (ins.channels, ins.height, ins.width);
        let at = |v: &[f64], ch: usize, y: isize, x: isize| -> Option<f64> {
            (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| v[(ch * h + y as usize) * w + x as usize])
        };
        let next: Vec<f64> = match layer.op {
            LayerOp::Conv {
                kernel,
                stride,
                padding,
                channels_out,
                groups,
                relu,
            } => {
                let wt = weights.get(&kernel_name(&layer.name)).unwrap().data();
                let bs = weights.get(&bias_name(&layer.name)).unwrap().data();
                let cin_g = c / groups;
                let cout_g = channels_out / groups;
                let mut v = Vec::with_capacity(outs.len());
                for co in 0..channels_out {
                    let g = co / cout_g;
                    for oy in 0..outs.height {
                        for ox in 0..outs.width {
                            let mut acc = bs[co] as f64;
                            for ci in 0..cin_g {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let y = (oy * stride + ky) as isize - padding as isize;
                                        let x = (ox * stride + kx) as isize - padding as isize;
                                        let val = at(cur, g * cin_g + ci, y, x).unwrap_or(0.0);
                                        acc += wt[((co * cin_g + ci) * kernel + ky) * kernel + kx] as f64 * val;
                                    }
                                }
                            }
                            v.push(if relu { acc.max(0.0) } else { acc });
                        }
                    }
                }
                v
            }
            LayerOp::Maxpool { kernel, stride, padding } => {
                let mut v = Vec::with_capacity(outs.len());
                for ch in 0..c {
                    for oy in 0..outs.height {
                        for ox in 0..outs.width {
                            let mut m = f64::NEG_INFINITY;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let y = (oy * stride + ky) as isize - padding as isize;
                                    let x = (ox * stride + kx) as isize - padding as isize;
                                    if let Some(val) = at(cur, ch, y, x) {
                                        m = m.max(val);
                                    }
                                }
                            }
                            v.push(m);
                        }
                    }
                }
                v
            }
            LayerOp::Relu => cur.iter().map(|v| v.max(0.0)).collect(),
            LayerOp::Lrn { n, alpha, beta, k } => {
                let half = (n - 1) / 2;
                let plane = h * w;
                let mut v = vec![0.0; cur.len()];
                for ch in 0..c {
                    for p in 0..plane {
                        let mut sq = 0.0;
                        for cc in 0..c {
                            if cc + half >= ch && cc <= ch + (n - 1 - half) {
                                sq += cur[cc * plane + p].powi(2);
                            }
                        }
                        let denom = (k as f64 + alpha as f64 / n as f64 * sq).powf(beta as f64);
                        v[ch * plane + p] = cur[ch * plane + p] / denom;
                    }
                }
                v
            }
            LayerOp::Fc { channels_out, relu } => {
                let wt = weights.get(&kernel_name(&layer.name)).unwrap().data();
                let bs = weights.get(&bias_name(&layer.name)).unwrap().data();
                (0..channels_out)
                    .map(|o| {
                        let acc = bs[o] as f64
                            + cur
                                .iter()
                                .enumerate()
                                .map(|(j, x)| wt[o * cur.len() + j] as f64 * x)
                                .sum::<f64>();
                        if relu {
                            acc.max(0.0)
                        } else {
                            acc
                        }
                    })
                    .collect()
            }
            LayerOp::Softmax => {
                let m = cur.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = cur.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
        };
        next
    }
}

/// `max |a - b| / max |b|` (absolute when the reference is all zero).
pub fn relative_error(a: &[f32], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((*x as f64 - y).abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn layer(name: String, op: LayerOp) -> LayerSpec {
    LayerSpec { name, op }
}

/// A random valid network: 1 to 4 spatial layers drawn from conv / maxpool /
/// relu / lrn, optionally followed by fc and softmax.
pub fn random_spec(rng: &mut Rng, with_head: bool) -> NetworkSpec {
    loop {
        let side = 8 + rng.below(13) as usize;
        let mut layers = Vec::new();
        let mut size = side;
        let mut channels = 3;
        let depth = 1 + rng.below(4) as usize;
        for d in 0..depth {
            let name = format!("l{d}");
            let op = match rng.below(5) {
                0 | 1 => {
                    let kernel = 1 + rng.below(5.min(size as u64)) as usize;
                    let stride = 1 + rng.below(3) as usize;
                    let padding = rng.below(3) as usize;
                    let groups = if channels % 2 == 0 && rng.below(2) == 0 { 2 } else { 1 };
                    let channels_out = groups * (1 + rng.below(4) as usize);
                    LayerOp::Conv {
                        kernel,
                        stride,
                        padding,
                        channels_out,
                        groups,
                        relu: rng.below(2) == 0,
                    }
                }
                2 => {
                    let kernel = 2 + rng.below(2) as usize;
                    LayerOp::Maxpool {
                        kernel,
                        stride: 1 + rng.below(2) as usize,
                        padding: rng.below(kernel as u64) as usize,
                    }
                }
                3 => LayerOp::Relu,
                _ => LayerOp::Lrn {
                    n: [3, 5][rng.below(2) as usize],
                    alpha: 1e-2,
                    beta: 0.75,
                    k: 2.0,
                },
            };
            if let Some((k, s, p)) = op.window() {
                let padded = size + 2 * p;
                if padded < k || (padded - k) % s != 0 {
                    break;
                }
                size = (padded - k) / s + 1;
            }
            if let LayerOp::Conv { channels_out, .. } = op {
                channels = channels_out;
            }
            layers.push(layer(name, op));
        }
        if layers.is_empty() {
            continue;
        }
        if with_head {
            layers.push(layer(
                "fc".into(),
                LayerOp::Fc {
                    channels_out: 2 + rng.below(5) as usize,
                    relu: false,
                },
            ));
            layers.push(layer("prob".into(), LayerOp::Softmax));
        }
        if let Ok(spec) = NetworkSpec::new("random", InputSpec { channels: 3, side }, layers) {
            return spec;
        }
    }
}

/// Random input tensor `[1, 3, side, side]` with values in [-128, 128).
pub fn random_input(rng: &mut Rng, side: usize) -> Tensor {
    let data = (0..3 * side * side).map(|_| rng.next_u8() as f32 - 128.0).collect();
    Tensor::new(vec![1, 3, side, side], data).unwrap()
}

pub fn random_image(rng: &mut Rng, w: usize, h: usize) -> Image {
    let pixels = (0..w * h).map(|_| [rng.next_u8(), rng.next_u8(), rng.next_u8()]).collect();
    Image::new(w, h, pixels).unwrap()
}

/// Worst per-layer relative error of the engine vs the oracle, each oracle
/// layer fed with the engine's own input to that layer, plus the end-to-end
/// error of the final layer when the oracle runs on its own.
pub fn forward_error(spec: &NetworkSpec, rng: &mut Rng) -> (f64, f64) {
    let weights = WeightStore::random(spec, rng);
    let input = random_input(rng, spec.input.side);
    let net = scopelens::Network::new(spec.clone(), weights.clone()).unwrap();
    let trace = net.forward(&input).unwrap();
    let mut prev: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let mut worst: f64 = 0.0;
    for (i, (_, t)) in trace.layers().enumerate() {
        let reference = oracle_layer(spec, &weights, i, &prev);
        worst = worst.max(relative_error(t.data(), &reference));
        prev = t.data().iter().map(|&v| v as f64).collect();
    }
    let chained = oracle_forward(spec, &weights, input.data());
    let end_to_end = relative_error(trace.last().data(), chained.last().unwrap());
    (worst, end_to_end)
}

pub struct PlantedOutcome {
    pub rf_size: f64,
    pub theoretical: usize,
    pub peak_offset: f64,
    pub eval: scopelens::segmenter::LocalizationEval,
}

/// Empirical field of the planted unit plus segmentation quality against the
/// pasted pattern boxes.
pub fn planted_end_to_end(seed: u64, images: usize) -> PlantedOutcome {
    use scopelens::rfest::{estimate_unit, rf_size, RFEstimationConfig};
    use scopelens::segmenter::{calibrate_thresholds, evaluate_localization, segment, LocalizationSample, DEFAULT_QUANTILE};
    use scopelens::synthetic::{planted_dataset, planted_detector, planted_unit, PLANTED_SIDE};

    let net = planted_detector(PLANTED_SIDE, false).unwrap();
    let unit = planted_unit();
    let data = planted_dataset(seed, PLANTED_SIDE, images);
    let tensors: Vec<Tensor> = data.iter().map(|p| net.preprocess(&p.image)).collect();
    let indexed: Vec<(usize, Tensor)> = tensors.iter().cloned().enumerate().collect();

    let config = RFEstimationConfig {
        seed,
        ..Default::default()
    };
    let est = estimate_unit(&net, &unit, &indexed, &config).unwrap();
    let size = rf_size(&est.rf.canvas, 0.5).unwrap();
    let (px, py) = est.rf.peak();
    let c = est.rf.center() as f64;
    let peak_offset = ((px as f64 - c).powi(2) + (py as f64 - c).powi(2)).sqrt();
    let theoretical = scopelens::theoretical_rf(net.spec(), &unit.layer).unwrap().size;

    let thresholds = calibrate_thresholds(&net, std::slice::from_ref(&unit), &tensors, DEFAULT_QUANTILE).unwrap();
    let samples: Vec<LocalizationSample> = data
        .iter()
        .zip(&tensors)
        .map(|(p, t)| {
            let seg = segment(&net, t, std::slice::from_ref(&unit), &thresholds).unwrap().remove(0);
            let mut truth = Mask::new(PLANTED_SIDE, PLANTED_SIDE);
            for b in &p.boxes {
                truth.fill_box(b.x0, b.y0, b.x1, b.y1);
            }
            LocalizationSample {
                predicted_mask: seg.mask,
                detections: seg.detections.iter().map(|d| (d.score, d.bbox)).collect(),
                truth_mask: truth,
                truth_boxes: p.boxes.clone(),
            }
        })
        .collect();
    PlantedOutcome {
        rf_size: size,
        theoretical,
        peak_offset,
        eval: evaluate_localization(&samples, 0.5).unwrap(),
    }
}

/// Apply removals in order, independently of the simplifier.
pub fn replay(image: &Image, segments: &scopelens::SegmentMap, removed: &[u16]) -> Image {
    let mut img = image.clone();
    for &l in removed {
        img = scopelens::simplify::remove_segment(&img, segments, l, &Default::default()).unwrap();
    }
    img
}

pub fn top1(p: &[f32]) -> usize {
    (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b })
}

/// Greedy trace reconstructed from the scores of every ordered removal
/// prefix (all removal orders enumerated up front).
pub fn enumerated_greedy(
    net: &scopelens::Network,
    image: &Image,
    segments: &scopelens::SegmentMap,
    target: usize,
) -> Vec<(u16, f32)> {
    use std::collections::BTreeMap;
    let n = segments.segment_count() as u16;
    let mut table: BTreeMap<Vec<u16>, Vec<f32>> = BTreeMap::new();
    let mut frontier: Vec<(Vec<u16>, Image)> = vec![(Vec::new(), image.clone())];
    while let Some((prefix, img)) = frontier.pop() {
        for l in 0..n {
            if prefix.contains(&l) {
                continue;
            }
            let Ok(next) = scopelens::simplify::remove_segment(&img, segments, l, &Default::default()) else {
                continue;
            };
            let mut key = prefix.clone();
            key.push(l);
            table.insert(key.clone(), net.classify(&next).unwrap());
            frontier.push((key, next));
        }
    }
    let mut path: Vec<u16> = Vec::new();
    let mut out = Vec::new();
    loop {
        let mut best: Option<(u16, &Vec<f32>)> = None;
        for (key, probs) in table.range(path.clone()..) {
            if key.len() != path.len() + 1 || !key.starts_with(&path) {
                continue;
            }
            let l = *key.last().unwrap();
            if best.map_or(true, |(_, b)| probs[target] > b[target]) {
                best = Some((l, probs));
            }
        }
        match best {
            Some((l, probs)) if top1(probs) == target => {
                path.push(l);
                out.push((l, probs[target]));
            }
            _ => return out,
        }
    }
}

/// Check every committed step (and the stopping step) against freshly
/// recomputed candidates. Returns the number of candidate evaluations.
pub fn recheck_trace(
    net: &scopelens::Network,
    image: &Image,
    segments: &scopelens::SegmentMap,
    trace: &scopelens::SimplificationTrace,
) -> Result<usize, String> {
    let mut evaluated = 0;
    let n = segments.segment_count() as u16;
    for step in 0..=trace.removals.len() {
        let state = replay(image, segments, &trace.removed[..step]);
        let mut best: Option<(u16, Vec<f32>)> = None;
        for l in (0..n).filter(|l| !trace.removed[..step].contains(l)) {
            let Ok(next) = scopelens::simplify::remove_segment(&state, segments, l, &Default::default()) else {
                continue;
            };
            let p = net.classify(&next).unwrap();
            evaluated += 1;
            if best.as_ref().map_or(true, |(_, b)| p[trace.target] > b[trace.target]) {
                best = Some((l, p));
            }
        }
        match (trace.removals.get(step), best) {
            (Some(r), Some((l, p))) => {
                if r.label != l || r.score != p[trace.target] || top1(&p) != trace.target {
                    return Err(format!("step {step}: chose {} ({}) but recheck gives {l} ({})", r.label, r.score, p[trace.target]));
                }
            }
            (Some(r), None) => return Err(format!("step {step}: removal {} has no candidate", r.label)),
            (None, Some((l, p))) => {
                if top1(&p) == trace.target {
                    return Err(format!("stopped early: removing {l} keeps the target"));
                }
            }
            (None, None) => {}
        }
    }
    if top1(&net.classify(&trace.final_image).unwrap()) != trace.target {
        return Err("final image is not classified as the target".into());
    }
    Ok(evaluated)
}

/// AP from its definition: one operating point per distinct score, recall
/// over all positives, no interpolation.
pub fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let total = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let retrieved = scores.iter().filter(|&&s| s >= t).count() as f64;
        let hits = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l).count() as f64;
        let recall = hits / total;
        ap += hits / retrieved * (recall - prev);
        prev = recall;
    }
    ap
}

/// Tally in one pass, then order by (-count, name).
pub fn tally(d: &[scopelens::emergence::AnnotatedImage]) -> Vec<(String, usize)> {
    let mut m: std::collections::BTreeMap<String, usize> = std::collections::BTreeMap::new();
    for img in d {
        for i in &img.instances {
            *m.entry(i.class.clone()).or_insert(0) += 1;
        }
    }
    let mut v: Vec<(String, usize)> = m.into_iter().collect();
    v.sort_by_key(|(k, c)| (std::cmp::Reverse(*c), k.clone()));
    v
}

/// AP of ranking by coverage computed from the definition.
pub fn exhaustive_ap(d: &[scopelens::emergence::AnnotatedImage], scene: &str, class: &str) -> f64 {
    let scores: Vec<f64> = d.iter().map(|i| i.coverage(class)).collect();
    let pos: Vec<bool> = d.iter().map(|i| i.scene == scene).collect();
    let total = pos.iter().filter(|&&p| p).count() as f64;
    let mut ts = scores.clone();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in ts {
        let got = scores.iter().filter(|&&s| s >= t).count() as f64;
        let hit = scores.iter().zip(&pos).filter(|(&s, &p)| s >= t && p).count() as f64;
        ap += hit / got * (hit / total - prev);
        prev = hit / total;
    }
    ap
}

/// Occluders strictly outside the theoretical field of the argmax position
/// never change its activation.
pub fn locality_case(rng: &mut Rng, occluders: usize) -> (usize, usize) {
    let spec = random_spec(rng, false);
    let side = spec.input.side;
    let spatial: Vec<String> = spec.layers().iter().map(|l| l.name.clone()).collect();
    let layer = spatial[rng.below(spatial.len() as u64) as usize].clone();
    let shape = spec.output_shape(&layer).unwrap();
    let unit = scopelens::Unit::new(layer.clone(), rng.below(shape.channels as u64) as usize);
    let net = scopelens::Network::new(spec.clone(), WeightStore::random(&spec, rng)).unwrap();
    let input = random_input(rng, side).reshape(vec![3, side, side]).unwrap();

    // locate the argmax the same way the map does
    let trace = net.forward(&input.clone().reshape(vec![1, 3, side, side]).unwrap()).unwrap();
    let plane = trace.feature_map(&unit, 0).unwrap();
    let mut best = 0;
    for (i, &v) in plane.iter().enumerate() {
        if v > plane[best] {
            best = i;
        }
    }
    let geom = scopelens::theoretical_rf(&spec, &layer).unwrap();
    let (x0, x1) = geom.clamped(best % shape.width, side);
    let (y0, y1) = geom.clamped(best / shape.width, side);

    let patch = 1 + rng.below(4) as usize;
    let mut positions = Vec::new();
    let mut attempts = 0;
    while positions.len() < occluders && attempts < occluders * 200 {
        attempts += 1;
        let ox = rng.below((side - patch + 1) as u64) as usize;
        let oy = rng.below((side - patch + 1) as u64) as usize;
        let outside = ox + patch - 1 < x0 || ox > x1 || oy + patch - 1 < y0 || oy > y1;
        if outside {
            positions.push((ox, oy));
        }
    }
    if positions.is_empty() {
        return (0, 0);
    }
    let grid = scopelens::rfest::OccluderGrid {
        side,
        patch,
        stride: 1,
        cells: 0,
        positions,
    };
    let map = scopelens::rfest::discrepancy_map(&net, &input, 0, &unit, &grid, rng, scopelens::rfest::FillMode::UniformRandom).unwrap();
    (map.values.len(), map.values.iter().filter(|&&v| v != 0.0).count())
}
