//! Minimal image representations.
//!
//! Segments are deleted in the gradient domain: the deleted pixels are
//! replaced by the harmonic interpolation of their surroundings (zero
//! interior gradients). The greedy loop removes, at every step, the segment
//! whose deletion keeps the target-class probability highest, and stops
//! before the image would be misclassified.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, LabelImage, Mask};
use crate::net::forward::Network;
use crate::tensor::Tensor;

/// Per-pixel segment labels with optional object-class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    width: usize,
    height: usize,
    labels: Vec<u16>,
    count: usize,
    pub names: BTreeMap<u16, String>,
}

impl SegmentMap {
    /// Labels must form the contiguous set `0..L`.
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::Shape(format!(
                "{width}x{height} segment map needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        let present: BTreeSet<u16> = labels.iter().copied().collect();
        let count = present.len();
        if present.iter().enumerate().any(|(i, &l)| l as usize != i) {
            return Err(Error::InvalidArgument(format!(
                "segment labels are not contiguous from 0 ({count} distinct labels)"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            count,
            names: BTreeMap::new(),
        })
    }

    pub fn with_names(mut self, names: BTreeMap<u16, String>) -> Self {
        self.names = names;
        self
    }

    /// Label image (PGM or 16-bit PNG) plus an optional JSON sidecar
    /// mapping label ids to class names.
    pub fn load(labels: impl AsRef<Path>, names: Option<&Path>) -> Result<Self> {
        let img = LabelImage::load(labels)?;
        let mut map = Self::new(img.width, img.height, img.labels)?;
        if let Some(path) = names {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let raw: BTreeMap<String, String> = serde_json::from_str(&text)?;
            for (k, v) in raw {
                let id: u16 = k
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("label id `{k}`")))?;
                map.names.insert(id, v);
            }
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.count
    }

    pub fn label_at(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn mask(&self, label: u16) -> Mask {
        let bits = self.labels.iter().map(|&l| l == label).collect();
        Mask::from_bits(self.width, self.height, bits).expect("dims match")
    }

    pub fn name(&self, label: u16) -> Option<&str> {
        self.names.get(&label).map(String::as_str)
    }
}

/// Split an image into an `n x n` grid of blocks, labelled row-major.
pub fn grid_segments(width: usize, height: usize, n: usize) -> SegmentMap {
    assert!(n >= 1 && n <= width && n <= height);
    let labels = (0..height)
        .flat_map(|y| (0..width).map(move |x| ((y * n / height) * n + x * n / width) as u16))
        .collect();
    SegmentMap::new(width, height, labels).expect("grid labels are contiguous")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillOptions {
    /// Stop when `||b - A u|| / ||b||` drops to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FillOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 10_000,
        }
    }
}

/// How masked pixels on the image border are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// The mask must not touch the border.
    Strict,
    /// Zero-flux condition: missing neighbours are dropped from the stencil.
    Natural,
}

#[derive(Debug, Clone)]
pub struct HarmonicFill {
    /// Per-pixel float RGB; unmasked pixels hold the original values.
    pub values: Vec<[f64; 3]>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solve the discrete Laplace equation over the masked pixels with the
/// unmasked neighbours as Dirichlet data, by Gauss-Seidel sweeps.
pub fn harmonic_fill(img: &Image, mask: &Mask, opts: &FillOptions, border: Border) -> Result<HarmonicFill> {
    let (w, h) = (img.width(), img.height());
    if mask.width() != w || mask.height() != h {
        return Err(Error::Shape(format!(
            "mask {}x{} vs image {w}x{h}",
            mask.width(),
            mask.height()
        )));
    }
    let mut values: Vec<[f64; 3]> = img
        .pixels()
        .iter()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();

    let unknowns: Vec<usize> = (0..w * h).filter(|&i| mask.bits()[i]).collect();
    if unknowns.is_empty() {
        return Ok(HarmonicFill {
            values,
            iterations: 0,
            residual: 0.0,
        });
    }

    // Stencil: for each unknown, its in-image neighbours split into masked
    // (variables) and unmasked (boundary data).
    let mut neighbours: Vec<Vec<usize>> = Vec::with_capacity(unknowns.len());
    let mut rhs: Vec<[f64; 3]> = Vec::with_capacity(unknowns.len());
    let mut anchored = vec![false; unknowns.len()];
    for (k, &i) in unknowns.iter().enumerate() {
        let (x, y) = (i % w, i / w);
        if border == Border::Strict && (x == 0 || y == 0 || x + 1 == w || y + 1 == h) {
            return Err(Error::InvalidArgument(format!(
                "mask touches the image border at ({x}, {y})"
            )));
        }
        let mut nb = Vec::with_capacity(4);
        let mut b = [0.0; 3];
        let cand = [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        ];
        for j in cand.into_iter().flatten() {
            if mask.bits()[j] {
                nb.push(j);
            } else {
                anchored[k] = true;
                for c in 0..3 {
                    b[c] += values[j][c];
                }
            }
        }
        neighbours.push(nb);
        rhs.push(b);
    }
    let degree: Vec<f64> = unknowns
        .iter()
        .map(|&i| {
            let (x, y) = (i % w, i / w);
            ((x > 0) as u8 + (x + 1 < w) as u8 + (y > 0) as u8 + (y + 1 < h) as u8) as f64
        })
        .collect();

    check_anchored(&unknowns, &neighbours, &anchored, w)?;

    // Start from the mean of row and column linear interpolations between the
    // nearest unmasked pixels; this is exact for affine boundary data.
    let mut mean = [0.0; 3];
    let mut anchors = 0.0;
    for (k, b) in rhs.iter().enumerate() {
        let n_boundary = degree[k] - neighbours[k].len() as f64;
        if n_boundary > 0.0 {
            for c in 0..3 {
                mean[c] += b[c];
            }
            anchors += n_boundary;
        }
    }
    for c in mean.iter_mut() {
        *c /= anchors;
    }
    let initial: Vec<[f64; 3]> = unknowns
        .iter()
        .map(|&i| initial_guess(&values, mask, w, h, i).unwrap_or(mean))
        .collect();
    for (&i, v) in unknowns.iter().zip(initial) {
        values[i] = v;
    }

    let b_norm = rhs
        .iter()
        .map(|b| b.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        for (k, &i) in unknowns.iter().enumerate() {
            let mut s = rhs[k];
            for &j in &neighbours[k] {
                for c in 0..3 {
                    s[c] += values[j][c];
                }
            }
            for c in 0..3 {
                values[i][c] = s[c] / degree[k];
            }
        }
        iterations += 1;

        let mut r2 = 0.0;
        for (k, &i) in unknowns.iter().enumerate() {
            for c in 0..3 {
                let mut r = rhs[k][c] - degree[k] * values[i][c];
                for &j in &neighbours[k] {
                    r += values[j][c];
                }
                r2 += r * r;
            }
        }
        residual = r2.sqrt() / scale;
        if residual <= opts.tolerance {
            break;
        }
    }
    Ok(HarmonicFill {
        values,
        iterations,
        residual,
    })
}

/// Linear interpolation between the nearest unmasked pixels along `step`
/// (one-sided if only one exists).
fn interpolate_line(values: &[[f64; 3]], mask: &Mask, i: usize, len: usize, at: usize, step: usize) -> Option<[f64; 3]> {
    let base = i - at * step;
    let lo = (0..at).rev().find(|&t| !mask.bits()[base + t * step]);
    let hi = (at + 1..len).find(|&t| !mask.bits()[base + t * step]);
    match (lo, hi) {
        (Some(a), Some(b)) => {
            let t = (at - a) as f64 / (b - a) as f64;
            let (va, vb) = (values[base + a * step], values[base + b * step]);
            Some([0, 1, 2].map(|c| va[c] + t * (vb[c] - va[c])))
        }
        (Some(a), None) => Some(values[base + a * step]),
        (None, Some(b)) => Some(values[base + b * step]),
        (None, None) => None,
    }
}

fn initial_guess(values: &[[f64; 3]], mask: &Mask, w: usize, h: usize, i: usize) -> Option<[f64; 3]> {
    let (x, y) = (i % w, i / w);
    match (
        interpolate_line(values, mask, i, w, x, 1),
        interpolate_line(values, mask, i, h, y, w),
    ) {
        (Some(a), Some(b)) => Some([0, 1, 2].map(|c| 0.5 * (a[c] + b[c]))),
        (a, b) => a.or(b),
    }
}

/// Every connected masked component needs at least one boundary neighbour.
fn check_anchored(unknowns: &[usize], neighbours: &[Vec<usize>], anchored: &[bool], w: usize) -> Result<()> {
    let index: std::collections::HashMap<usize, usize> =
        unknowns.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut seen = vec![false; unknowns.len()];
    for start in 0..unknowns.len() {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut ok = false;
        while let Some(k) = stack.pop() {
            ok |= anchored[k];
            for j in &neighbours[k] {
                let kk = index[j];
                if !seen[kk] {
                    seen[kk] = true;
                    stack.push(kk);
                }
            }
        }
        if !ok {
            let i = unknowns[start];
            return Err(Error::InvalidArgument(format!(
                "masked region at ({}, {}) has no unmasked neighbour",
                i % w,
                i / w
            )));
        }
    }
    Ok(())
}

fn quantize(img: &Image, fill: &HarmonicFill, mask: &Mask) -> Image {
    let mut out = img.clone();
    for (i, px) in out.pixels_mut().iter_mut().enumerate() {
        if mask.bits()[i] {
            let v = fill.values[i];
            *px = [
                v[0].round().clamp(0.0, 255.0) as u8,
                v[1].round().clamp(0.0, 255.0) as u8,
                v[2].round().clamp(0.0, 255.0) as u8,
            ];
        }
    }
    out
}

/// Replace the masked pixels with the harmonic interpolation of their
/// surroundings. The mask must leave the outer pixel ring untouched.
pub fn poisson_fill(img: &Image, mask: &Mask) -> Result<Image> {
    poisson_fill_with(img, mask, &FillOptions::default(), Border::Strict)
}

pub fn poisson_fill_with(img: &Image, mask: &Mask, opts: &FillOptions, border: Border) -> Result<Image> {
    let fill = harmonic_fill(img, mask, opts, border)?;
    Ok(quantize(img, &fill, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Removal {
    pub label: u16,
    /// Target-class probability after the removal.
    pub score: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimplificationTrace {
    pub target: usize,
    pub initial_score: f32,
    /// Committed removals, in order.
    pub removals: Vec<Removal>,
    /// Candidate `(label, score)` pairs evaluated at every step, including
    /// the final rejected step.
    pub candidates: Vec<Vec<(u16, f32)>>,
    #[serde(skip)]
    pub final_image: Image,
    pub final_score: f32,
    pub removed: Vec<u16>,
    pub retained: Vec<u16>,
    pub segment_names: BTreeMap<u16, String>,
}

impl SimplificationTrace {
    pub fn retained_classes(&self) -> BTreeSet<&str> {
        self.retained
            .iter()
            .filter_map(|l| self.segment_names.get(l).map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimplifyOptions {
    pub fill: FillOptions,
}

fn top1(probs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

const CANDIDATE_BATCH: usize = 32;

/// Class probabilities for each image, batched.
fn probabilities(net: &Network, images: &[Image]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CANDIDATE_BATCH) {
        let trace = net.forward_images(chunk, &Default::default())?;
        let last = trace.last();
        let classes = last.len() / chunk.len();
        out.extend(last.data().chunks(classes).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Delete one segment from the current image (natural border condition).
pub fn remove_segment(img: &Image, segments: &SegmentMap, label: u16, opts: &FillOptions) -> Result<Image> {
    poisson_fill_with(img, &segments.mask(label), opts, Border::Natural)
}

pub fn greedy_simplify(
    net: &Network,
    image: &Image,
    segments: &SegmentMap,
    target: usize,
    opts: &SimplifyOptions,
) -> Result<SimplificationTrace> {
    if segments.width() != image.width() || segments.height() != image.height() {
        return Err(Error::Shape("segment map and image sizes differ".into()));
    }
    let initial = probabilities(net, std::slice::from_ref(image))?.remove(0);
    if target >= initial.len() {
        return Err(Error::InvalidArgument(format!(
            "target class {target} outside {} classes",
            initial.len()
        )));
    }
    if top1(&initial) != target {
        return Err(Error::Precondition(format!(
            "image classified as {}, not target {target}",
            top1(&initial)
        )));
    }

    let mut current = image.clone();
    let mut score = initial[target];
    let mut remaining: Vec<u16> = (0..segments.segment_count() as u16).collect();
    let mut removals = Vec::new();
    let mut candidates_log = Vec::new();

    while !remaining.is_empty() {
        let filled: Vec<(u16, Image)> = remaining
            .par_iter()
            .filter_map(|&l| {
                remove_segment(&current, segments, l, &opts.fill)
                    .ok()
                    .map(|img| (l, img))
            })
            .collect();
        if filled.is_empty() {
            break;
        }
        let images: Vec<Image> = filled.iter().map(|(_, img)| img.clone()).collect();
        let probs = probabilities(net, &images)?;
        candidates_log.push(
            filled
                .iter()
                .zip(&probs)
                .map(|((l, _), p)| (*l, p[target]))
                .collect(),
        );
        // Highest remaining score = smallest decrease; ties to the lowest label.
        let mut best = 0;
        for i in 1..filled.len() {
            if probs[i][target] > probs[best][target] {
                best = i;
            }
        }
        if top1(&probs[best]) != target {
            break;
        }
        let label = filled[best].0;
        score = probs[best][target];
        current = filled[best].1.clone();
        remaining.retain(|&l| l != label);
        removals.push(Removal { label, score });
    }

    let removed: Vec<u16> = removals.iter().map(|r| r.label).collect();
    Ok(SimplificationTrace {
        target,
        initial_score: initial[target],
        removals,
        candidates: candidates_log,
        final_image: current,
        final_score: score,
        removed,
        retained: remaining,
        segment_names: segments.names.clone(),
    })
}

/// Percentage of traces per scene that retain at least one segment of each
/// object class, sorted by percentage (descending) then name.
pub fn retained_stats(traces: &[(String, SimplificationTrace)]) -> Result<BTreeMap<String, Vec<(String, f64)>>> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces".into()));
    }
    let mut by_scene: BTreeMap<&str, Vec<&SimplificationTrace>> = BTreeMap::new();
    for (scene, t) in traces {
        by_scene.entry(scene.as_str()).or_default().push(t);
    }
    let mut out = BTreeMap::new();
    for (scene, ts) in by_scene {
        let classes: BTreeSet<&str> = ts
            .iter()
            .flat_map(|t| t.segment_names.values().map(String::as_str))
            .collect();
        let mut rows: Vec<(String, f64)> = classes
            .into_iter()
            .map(|class| {
                let kept = ts
                    .iter()
                    .filter(|t| t.retained_classes().contains(class))
                    .count();
                (class.to_string(), 100.0 * kept as f64 / ts.len() as f64)
            })
            .collect();
        rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        out.insert(scene.to_string(), rows);
    }
    Ok(out)
}

/// Convenience: preprocess a single image into a one-sample batch.
pub fn single_batch(net: &Network, img: &Image) -> Result<Tensor> {
    let side = net.side();
    net.preprocess(img).reshape(vec![1, 3, side, side])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interior_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        let mut m = Mask::new(w, h);
        m.fill_box(x0, y0, x1, y1);
        m
    }

    #[test]
    fn constant_boundary_fills_with_constant() {
        let mut img = Image::filled(20, 20, [77, 77, 77]);
        for y in 5..15 {
            for x in 5..15 {
                img.set(x, y, [200, 3, 90]);
            }
        }
        let mask = interior_mask(20, 20, 5, 5, 14, 14);
        let out = poisson_fill(&img, &mask).unwrap();
        for p in out.pixels() {
            for c in 0..3 {
                assert!((p[c] as i32 - 77).abs() <= 1, "{p:?}");
            }
        }
    }

    #[test]
    fn empty_mask_is_identity() {
        let img = Image::new(4, 4, (0..16).map(|i| [i as u8, 2, 3]).collect()).unwrap();
        assert_eq!(poisson_fill(&img, &Mask::new(4, 4)).unwrap(), img);
    }

    #[test]
    fn border_mask_is_rejected() {
        let img = Image::filled(6, 6, [1, 2, 3]);
        let mask = interior_mask(6, 6, 0, 2, 2, 3);
        assert!(poisson_fill(&img, &mask).is_err());
        // the natural border variant accepts it
        assert!(poisson_fill_with(&img, &mask, &FillOptions::default(), Border::Natural).is_ok());
    }

    #[test]
    fn whole_image_mask_has_no_boundary() {
        let img = Image::filled(3, 3, [1, 2, 3]);
        let mut mask = Mask::new(3, 3);
        mask.fill_box(0, 0, 2, 2);
        assert!(poisson_fill_with(&img, &mask, &FillOptions::default(), Border::Natural).is_err());
    }

    #[test]
    fn pixels_outside_mask_are_untouched() {
        let img = Image::new(
            9,
            9,
            (0..81).map(|i| [(i * 3) as u8, (i * 5) as u8, (i * 7) as u8]).collect(),
        )
        .unwrap();
        let mask = interior_mask(9, 9, 2, 3, 5, 6);
        let out = poisson_fill(&img, &mask).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                if !mask.get(x, y) {
                    assert_eq!(out.get(x, y), img.get(x, y));
                }
            }
        }
    }

    #[test]
    fn grid_segmenter_labels() {
        let s = grid_segments(6, 4, 2);
        assert_eq!(s.segment_count(), 4);
        assert_eq!(s.label_at(0, 0), 0);
        assert_eq!(s.label_at(5, 0), 1);
        assert_eq!(s.label_at(0, 3), 2);
        assert_eq!(s.label_at(5, 3), 3);
        assert_eq!(s.mask(3).count(), 6);
    }

    #[test]
    fn non_contiguous_labels_are_rejected() {
        assert!(SegmentMap::new(2, 1, vec![0, 2]).is_err());
        assert!(SegmentMap::new(2, 1, vec![1, 1]).is_err());
    }

    fn trace_with(retained: Vec<u16>, names: &[(u16, &str)]) -> SimplificationTrace {
        SimplificationTrace {
            target: 0,
            initial_score: 0.9,
            removals: vec![],
            candidates: vec![],
            final_image: Image::filled(1, 1, [0, 0, 0]),
            final_score: 0.9,
            removed: vec![],
            retained,
            segment_names: names.iter().map(|(l, n)| (*l, n.to_string())).collect(),
        }
    }

    #[test]
    fn retention_percentages() {
        let names = [(0, "bed"), (1, "lamp"), (2, "wall")];
        let mut traces: Vec<(String, SimplificationTrace)> = (0..10)
            .map(|i| {
                let retained = if i < 3 { vec![0, 2] } else { vec![0] };
                ("bedroom".to_string(), trace_with(retained, &names))
            })
            .collect();
        traces.push(("kitchen".into(), trace_with(vec![1], &names)));
        let stats = retained_stats(&traces).unwrap();
        let bedroom = &stats["bedroom"];
        assert_eq!(bedroom[0], ("bed".to_string(), 100.0));
        assert_eq!(bedroom[1], ("wall".to_string(), 30.0));
        assert_eq!(bedroom[2], ("lamp".to_string(), 0.0));
        assert_eq!(stats["kitchen"][0], ("lamp".to_string(), 100.0));
        assert!(retained_stats(&[]).is_err());
    }
}
