//! Unit-based segmentation and single-pass scene + object localisation.
//!
//! A unit "sees" its thresholded feature-map positions; each position is
//! projected back to its theoretical receptive field. Masks are unions of
//! those boxes, detections are 8-connected clusters of positions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::annotation::SemanticGroup;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::metrics::{jaccard, pr_ap_with_total, quantile};
use crate::net::forward::{channel_plane, ActivationTrace, ForwardOptions, Network};
use crate::net::rf::theoretical_rf;
use crate::net::spec::{NetworkSpec, Unit};
use crate::tensor::Tensor;

pub const DEFAULT_QUANTILE: f64 = 0.995;
pub const DEFAULT_TOP_SCENES: usize = 5;

/// Inclusive pixel box `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", from = "[usize; 4]")]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl From<PixelBox> for [usize; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl From<[usize; 4]> for PixelBox {
    fn from(a: [usize; 4]) -> Self {
        PixelBox {
            x0: a[0],
            y0: a[1],
            x1: a[2],
            y1: a[3],
        }
    }
}

impl PixelBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    pub fn union(&self, o: &PixelBox) -> PixelBox {
        PixelBox {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }

    pub fn contains(&self, o: &PixelBox) -> bool {
        self.x0 <= o.x0 && self.y0 <= o.y0 && self.x1 >= o.x1 && self.y1 >= o.y1
    }

    pub fn iou(&self, o: &PixelBox) -> f64 {
        let ix0 = self.x0.max(o.x0);
        let iy0 = self.y0.max(o.y0);
        let ix1 = self.x1.min(o.x1);
        let iy1 = self.y1.min(o.y1);
        if ix0 > ix1 || iy0 > iy1 {
            return 0.0;
        }
        let inter = (ix1 - ix0 + 1) * (iy1 - iy0 + 1);
        inter as f64 / (self.area() + o.area() - inter) as f64
    }

    /// Map from a `from_side` square frame to a `width x height` image.
    pub fn rescale(&self, from_side: usize, width: usize, height: usize) -> PixelBox {
        let sx = width as f64 / from_side as f64;
        let sy = height as f64 / from_side as f64;
        PixelBox {
            x0: ((self.x0 as f64 * sx).floor() as usize).min(width - 1),
            y0: ((self.y0 as f64 * sy).floor() as usize).min(height - 1),
            x1: ((((self.x1 + 1) as f64 * sx).ceil() as usize).max(1) - 1).min(width - 1),
            y1: ((((self.y1 + 1) as f64 * sy).ceil() as usize).max(1) - 1).min(height - 1),
        }
    }

    pub fn to_mask(&self, width: usize, height: usize) -> Mask {
        let mut m = Mask::new(width, height);
        m.fill_box(self.x0, self.y0, self.x1, self.y1);
        m
    }
}

/// Projected receptive field of a feature position, clamped to the input.
pub fn project(spec: &NetworkSpec, layer: &str, pos: (usize, usize)) -> Result<PixelBox> {
    let shape = spec.output_shape(layer)?;
    if pos.0 >= shape.width || pos.1 >= shape.height {
        return Err(Error::InvalidArgument(format!(
            "position {pos:?} outside {}x{} feature map of {layer}",
            shape.width, shape.height
        )));
    }
    let geom = theoretical_rf(spec, layer)?;
    let side = spec.input.side;
    let (x0, x1) = geom.clamped(pos.0, side);
    let (y0, y1) = geom.clamped(pos.1, side);
    Ok(PixelBox { x0, y0, x1, y1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTag {
    pub unit: Unit,
    pub concept: String,
    pub category: SemanticGroup,
    pub precision: f64,
}

impl UnitTag {
    pub fn new(unit: Unit, concept: impl Into<String>, category: SemanticGroup, precision: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&precision) {
            return Err(Error::InvalidArgument(format!("precision {precision} outside [0, 1]")));
        }
        Ok(Self {
            unit,
            concept: concept.into(),
            category,
            precision,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub unit: Unit,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    /// Maximum activation inside the cluster.
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSegmentation {
    pub unit: Unit,
    /// Input-space (`side x side`) mask.
    pub mask: Mask,
    pub detections: Vec<Detection>,
}

/// Positions that fire: activation at or above the threshold and positive.
fn firing(plane: &[f32], threshold: f32) -> impl Iterator<Item = (usize, bool)> + '_ {
    plane
        .iter()
        .enumerate()
        .map(move |(i, &v)| (i, v >= threshold && v > 0.0))
}

/// Segment one sample of an existing activation trace.
pub fn segment_trace(
    spec: &NetworkSpec,
    trace: &ActivationTrace,
    sample: usize,
    units: &[Unit],
    thresholds: &[f32],
) -> Result<Vec<UnitSegmentation>> {
    if units.len() != thresholds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} units but {} thresholds",
            units.len(),
            thresholds.len()
        )));
    }
    let side = spec.input.side;
    let mut out = Vec::with_capacity(units.len());
    for (unit, &threshold) in units.iter().zip(thresholds) {
        spec.check_unit(unit)?;
        if !spec.is_spatial(&unit.layer)? {
            return Err(Error::UnsupportedLayer(unit.layer.clone()));
        }
        let shape = spec.output_shape(&unit.layer)?;
        let (w, h) = (shape.width, shape.height);
        let plane = trace.feature_map(unit, sample)?;
        let on: Vec<bool> = firing(&plane, threshold).map(|(_, f)| f).collect();

        let mut mask = Mask::new(side, side);
        let mut boxes: HashMap<usize, PixelBox> = HashMap::new();
        for (i, _) in on.iter().enumerate().filter(|(_, &f)| f) {
            let b = project(spec, &unit.layer, (i % w, i / w))?;
            mask.fill_box(b.x0, b.y0, b.x1, b.y1);
            boxes.insert(i, b);
        }

        let mut seen = vec![false; w * h];
        let mut detections = Vec::new();
        for start in 0..w * h {
            if !on[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut bbox = boxes[&start];
            let mut score = plane[start];
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                bbox = bbox.union(&boxes[&i]);
                score = score.max(plane[i]);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if on[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            detections.push(Detection {
                unit: unit.clone(),
                bbox,
                score,
            });
        }
        detections.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        out.push(UnitSegmentation {
            unit: unit.clone(),
            mask,
            detections,
        });
    }
    Ok(out)
}

fn deepest<'a>(spec: &NetworkSpec, units: impl Iterator<Item = &'a Unit>) -> Result<Option<String>> {
    let mut best: Option<(usize, &str)> = None;
    for u in units {
        let idx = spec.layer_index(&u.layer)?;
        if best.map_or(true, |(b, _)| idx > b) {
            best = Some((idx, &u.layer));
        }
    }
    Ok(best.map(|(_, l)| l.to_string()))
}

/// Segment a preprocessed `3 x side x side` image.
pub fn segment(net: &Network, image: &Tensor, units: &[Unit], thresholds: &[f32]) -> Result<Vec<UnitSegmentation>> {
    let side = net.side();
    let batch = image.clone().reshape(vec![1, net.spec().input.channels, side, side])?;
    let opts = ForwardOptions {
        keep_pre_activations: false,
        stop_after: deepest(net.spec(), units.iter())?,
    };
    let trace = net.forward_with(&batch, &opts)?;
    segment_trace(net.spec(), &trace, 0, units, thresholds)
}

/// Per-unit activation quantile over every position of every calibration
/// image.
pub fn calibrate_thresholds(net: &Network, units: &[Unit], images: &[Tensor], q: f64) -> Result<Vec<f32>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("calibration set is empty".into()));
    }
    for u in units {
        net.spec().check_unit(u)?;
    }
    let opts = ForwardOptions {
        keep_pre_activations: false,
        stop_after: deepest(net.spec(), units.iter())?,
    };
    let mut values: Vec<Vec<f32>> = vec![Vec::new(); units.len()];
    for chunk in images.chunks(16) {
        let trace = net.forward_with(&Tensor::stack(chunk)?, &opts)?;
        for (u, vals) in units.iter().zip(values.iter_mut()) {
            let t = trace
                .get(&u.layer)
                .ok_or_else(|| Error::UnknownLayer(u.layer.clone()))?;
            for s in 0..chunk.len() {
                vals.extend(channel_plane(t, u.channel, s)?);
            }
        }
    }
    values.iter().map(|v| quantile(v, q)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenePrediction {
    pub class: usize,
    pub label: String,
    pub prob: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDetection {
    pub layer: String,
    pub channel: usize,
    pub tag: String,
    pub category: SemanticGroup,
    /// Box in original image pixels.
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneReport {
    pub scenes: Vec<ScenePrediction>,
    pub detections: Vec<ReportDetection>,
}

/// Scene classification plus tagged-unit detections from one forward pass.
/// `requests` pairs each unit with its activation threshold.
pub fn report(
    net: &Network,
    tags: &[UnitTag],
    requests: &[(Unit, f32)],
    image: &Image,
    top_k: usize,
) -> Result<SceneReport> {
    let spec = net.spec();
    let mut chosen = Vec::with_capacity(requests.len());
    for (unit, _) in requests {
        let tag = tags
            .iter()
            .find(|t| &t.unit == unit)
            .ok_or_else(|| Error::InvalidArgument(format!("unit {unit} has no tag")))?;
        chosen.push(tag);
    }
    let side = net.side();
    let batch = net
        .preprocess(image)
        .reshape(vec![1, spec.input.channels, side, side])?;
    let trace = net.forward(&batch)?;

    let probs = trace.last().data();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let scenes = order
        .into_iter()
        .take(top_k)
        .map(|c| ScenePrediction {
            class: c,
            label: spec.label(c),
            prob: probs[c],
        })
        .collect();

    let units: Vec<Unit> = requests.iter().map(|(u, _)| u.clone()).collect();
    let thresholds: Vec<f32> = requests.iter().map(|(_, t)| *t).collect();
    let segs = segment_trace(spec, &trace, 0, &units, &thresholds)?;
    let mut detections = Vec::new();
    for (seg, tag) in segs.iter().zip(chosen) {
        for d in &seg.detections {
            detections.push(ReportDetection {
                layer: d.unit.layer.clone(),
                channel: d.unit.channel,
                tag: tag.concept.clone(),
                category: tag.category,
                bbox: d.bbox.rescale(side, image.width(), image.height()),
                score: d.score,
            });
        }
    }
    detections.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    Ok(SceneReport { scenes, detections })
}

/// One evaluation image: predictions and ground truth in the same frame.
#[derive(Debug, Clone)]
pub struct LocalizationSample {
    pub predicted_mask: Mask,
    pub detections: Vec<(f32, PixelBox)>,
    pub truth_mask: Mask,
    pub truth_boxes: Vec<PixelBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationEval {
    pub average_precision: f64,
    /// Mean Jaccard over images that contain ground truth.
    pub mean_jaccard: f64,
    pub images: usize,
    pub images_with_truth: usize,
    pub detections: usize,
    pub truth_boxes: usize,
    pub iou_threshold: f64,
    pub jaccard_aggregation: &'static str,
}

/// Detection AP (greedy IoU matching, highest score first) and mean mask
/// Jaccard.
pub fn evaluate_localization(samples: &[LocalizationSample], iou_threshold: f64) -> Result<LocalizationEval> {
    let total: usize = samples.iter().map(|s| s.truth_boxes.len()).sum();
    let mut flat: Vec<(f32, usize, PixelBox)> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.detections.iter().map(move |&(sc, b)| (sc, i, b)))
        .collect();
    flat.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut used: Vec<Vec<bool>> = samples.iter().map(|s| vec![false; s.truth_boxes.len()]).collect();
    let mut scores = Vec::with_capacity(flat.len());
    let mut hits = Vec::with_capacity(flat.len());
    for (score, img, b) in &flat {
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in samples[*img].truth_boxes.iter().enumerate() {
            if used[*img][j] {
                continue;
            }
            let iou = b.iou(t);
            if iou >= iou_threshold && best.map_or(true, |(_, v)| iou > v) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            used[*img][j] = true;
        }
        scores.push(*score as f64);
        hits.push(best.is_some());
    }
    let ap = pr_ap_with_total(&scores, &hits, total)?.average_precision;

    let mut jac = Vec::new();
    for s in samples.iter().filter(|s| !s.truth_mask.is_empty()) {
        jac.push(jaccard(&s.predicted_mask, &s.truth_mask)?);
    }
    let mean_jaccard = if jac.is_empty() {
        0.0
    } else {
        jac.iter().sum::<f64>() / jac.len() as f64
    };
    Ok(LocalizationEval {
        average_precision: ap,
        mean_jaccard,
        images: samples.len(),
        images_with_truth: jac.len(),
        detections: flat.len(),
        truth_boxes: total,
        iou_threshold,
        jaccard_aggregation: "mean over images with ground truth",
    })
}
