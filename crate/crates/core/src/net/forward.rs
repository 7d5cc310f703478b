//! Batched CPU forward pass with full activation capture.
//!
//! Every output element is accumulated by the same serial loop no matter how
//! work is split across threads, so traces are bit-reproducible.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{preprocess, Image};
use crate::net::spec::{FeatureShape, LayerOp, NetworkSpec, Unit};
use crate::net::weights::{bias_name, kernel_name, WeightStore};
use crate::tensor::Tensor;

/// Per-layer activations for one batch, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    layers: Vec<(String, Tensor)>,
    pre_activations: BTreeMap<String, Tensor>,
}

impl ActivationTrace {
    pub fn get(&self, layer: &str) -> Option<&Tensor> {
        self.layers.iter().find(|(n, _)| n == layer).map(|(_, t)| t)
    }

    /// Values before the fused rectification of a conv/fc layer, when
    /// requested.
    pub fn pre_activation(&self, layer: &str) -> Option<&Tensor> {
        self.pre_activations.get(layer)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layers.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn last(&self) -> &Tensor {
        &self.layers.last().expect("nonempty trace").1
    }

    /// Feature map (H x W, row-major) of one unit for one sample.
    pub fn feature_map(&self, unit: &Unit, sample: usize) -> Result<Vec<f32>> {
        let t = self
            .get(&unit.layer)
            .ok_or_else(|| Error::UnknownLayer(unit.layer.clone()))?;
        channel_plane(t, unit.channel, sample)
    }
}

pub(crate) fn channel_plane(t: &Tensor, channel: usize, sample: usize) -> Result<Vec<f32>> {
    let s = t.shape();
    if s.len() != 4 || channel >= s[1] || sample >= s[0] {
        return Err(Error::Shape(format!(
            "no channel {channel} / sample {sample} in {s:?}"
        )));
    }
    let plane = s[2] * s[3];
    let start = (sample * s[1] + channel) * plane;
    Ok(t.data()[start..start + plane].to_vec())
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub keep_pre_activations: bool,
    /// Stop after this layer; later layers are not computed.
    pub stop_after: Option<String>,
}

/// A validated network: spec plus matching weights, with inference counters.
#[derive(Debug)]
pub struct Network {
    spec: NetworkSpec,
    weights: WeightStore,
    passes: AtomicU64,
    images: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            spec: self.spec.clone(),
            weights: self.weights.clone(),
            passes: AtomicU64::new(0),
            images: AtomicU64::new(0),
        }
    }
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: WeightStore) -> Result<Self> {
        weights.validate(&spec)?;
        Ok(Self {
            spec,
            weights,
            passes: AtomicU64::new(0),
            images: AtomicU64::new(0),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    /// Number of `forward` calls so far.
    pub fn passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    /// Number of images pushed through the network so far.
    pub fn images_forwarded(&self) -> u64 {
        self.images.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.passes.store(0, Ordering::Relaxed);
        self.images.store(0, Ordering::Relaxed);
    }

    pub fn side(&self) -> usize {
        self.spec.input.side
    }

    pub fn preprocess(&self, img: &Image) -> Tensor {
        preprocess(img, self.spec.input.side, self.spec.mean)
    }

    pub fn forward(&self, batch: &Tensor) -> Result<ActivationTrace> {
        self.forward_with(batch, &ForwardOptions::default())
    }

    pub fn forward_with(&self, batch: &Tensor, opts: &ForwardOptions) -> Result<ActivationTrace> {
        let input = self.spec.input;
        let s = batch.shape();
        if s.len() != 4 || s[1] != input.channels || s[2] != input.side || s[3] != input.side {
            return Err(Error::Shape(format!(
                "batch {s:?} does not match input N x {} x {} x {}",
                input.channels, input.side, input.side
            )));
        }
        let last = match &opts.stop_after {
            Some(name) => self.spec.layer_index(name)?,
            None => self.spec.layers().len() - 1,
        };
        self.passes.fetch_add(1, Ordering::Relaxed);
        self.images.fetch_add(s[0] as u64, Ordering::Relaxed);

        let n = s[0];
        let mut layers = Vec::with_capacity(last + 1);
        let mut pre_activations = BTreeMap::new();
        let mut cur = batch.data().to_vec();
        for (i, layer) in self.spec.layers()[..=last].iter().enumerate() {
            let in_shape = self.spec.input_shape(i);
            let out_shape = self.spec.shapes()[i];
            let mut out = match layer.op {
                LayerOp::Conv {
                    kernel,
                    stride,
                    padding,
                    groups,
                    ..
                } => {
                    let geom = ConvGeometry {
                        input: in_shape,
                        output: out_shape,
                        kernel,
                        stride,
                        padding,
                        groups,
                    };
                    conv2d(&cur, n, &geom, self.param(&layer.name, true)?, self.param(&layer.name, false)?)
                }
                LayerOp::Maxpool {
                    kernel,
                    stride,
                    padding,
                } => maxpool(&cur, n, in_shape, out_shape, kernel, stride, padding),
                LayerOp::Relu => cur.iter().map(|v| v.max(0.0)).collect(),
                LayerOp::Lrn { n: size, alpha, beta, k } => {
                    lrn(&cur, in_shape, size, alpha, beta, k)
                }
                LayerOp::Fc { channels_out, .. } => fc(
                    &cur,
                    n,
                    in_shape.len(),
                    channels_out,
                    self.param(&layer.name, true)?,
                    self.param(&layer.name, false)?,
                ),
                LayerOp::Softmax => softmax(&cur, n, in_shape.len()),
            };
            let fused_relu = matches!(
                layer.op,
                LayerOp::Conv { relu: true, .. } | LayerOp::Fc { relu: true, .. }
            );
            if fused_relu {
                if opts.keep_pre_activations {
                    pre_activations.insert(
                        layer.name.clone(),
                        Tensor::from_raw(dims(n, out_shape), out.clone()),
                    );
                }
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            layers.push((layer.name.clone(), Tensor::from_raw(dims(n, out_shape), out.clone())));
            cur = out;
        }
        Ok(ActivationTrace {
            layers,
            pre_activations,
        })
    }

    /// Forward a list of images, preprocessed with the network's geometry.
    pub fn forward_images(&self, images: &[Image], opts: &ForwardOptions) -> Result<ActivationTrace> {
        let tensors: Vec<Tensor> = images.par_iter().map(|img| self.preprocess(img)).collect();
        self.forward_with(&Tensor::stack(&tensors)?, opts)
    }

    /// Class probabilities (the final layer) for one image.
    pub fn classify(&self, img: &Image) -> Result<Vec<f32>> {
        let t = self.preprocess(img);
        let batch = t.reshape(vec![1, 3, self.side(), self.side()])?;
        Ok(self.forward(&batch)?.last().data().to_vec())
    }

    fn param(&self, layer: &str, kernel: bool) -> Result<&[f32]> {
        let name = if kernel {
            kernel_name(layer)
        } else {
            bias_name(layer)
        };
        self.weights
            .get(&name)
            .map(Tensor::data)
            .ok_or_else(|| Error::blob(name, "missing"))
    }
}

fn dims(n: usize, s: FeatureShape) -> Vec<usize> {
    vec![n, s.channels, s.height, s.width]
}

pub(crate) struct ConvGeometry {
    pub input: FeatureShape,
    pub output: FeatureShape,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

/// Grouped 2-D convolution by direct accumulation; weights are
/// `out x in/groups x k x k`. Every output starts from its bias and adds the
/// taps in `(input channel, ky, kx)` order, independent of threading.
pub(crate) fn conv2d(
    input: &[f32],
    n: usize,
    g: &ConvGeometry,
    weights: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let (cin, h, w) = (g.input.channels, g.input.height, g.input.width);
    let (cout, ho, wo) = (g.output.channels, g.output.height, g.output.width);
    let k = g.kernel;
    let cin_g = cin / g.groups;
    let cout_g = cout / g.groups;
    let (s, p) = (g.stride, g.padding);
    let in_len = cin * h * w;
    let taps = cin_g * k * k;

    // Valid output column range for each kx: 0 <= ox*s + kx - p < w.
    let ox_range: Vec<(usize, usize)> = (0..k)
        .map(|kx| {
            let lo = p.saturating_sub(kx).div_ceil(s);
            let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(wo) } else { 0 };
            (lo.min(hi), hi)
        })
        .collect();

    let mut out = vec![0f32; n * cout * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(idx, dst)| {
        let (sample, co) = (idx / cout, idx % cout);
        let grp = co / cout_g;
        let src_s = &input[sample * in_len..(sample + 1) * in_len];
        dst.fill(bias[co]);
        let wrow = &weights[co * taps..(co + 1) * taps];
        for ci in 0..cin_g {
            let plane = &src_s[(grp * cin_g + ci) * h * w..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wrow[(ci * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi) = ox_range[kx];
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * wo + lo..oy * wo + hi];
                        let x0 = lo * s + kx - p;
                        if s == 1 {
                            for (d, &v) in drow.iter_mut().zip(&src[x0..x0 + (hi - lo)]) {
                                *d += wv * v;
                            }
                        } else {
                            for (i, d) in drow.iter_mut().enumerate() {
                                *d += wv * src[x0 + i * s];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn maxpool(
    input: &[f32],
    n: usize,
    ins: FeatureShape,
    outs: FeatureShape,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Vec<f32> {
    let (h, w) = (ins.height, ins.width);
    let (ho, wo) = (outs.height, outs.width);
    let mut out = vec![0f32; n * outs.len()];
    out.par_chunks_mut(ho * wo)
        .zip(input.par_chunks(h * w))
        .for_each(|(dst, src)| {
            for oy in 0..ho {
                let y0 = (oy * stride) as isize - padding as isize;
                for ox in 0..wo {
                    let x0 = (ox * stride) as isize - padding as isize;
                    let mut m = f32::NEG_INFINITY;
                    for y in y0.max(0)..(y0 + kernel as isize).min(h as isize) {
                        for x in x0.max(0)..(x0 + kernel as isize).min(w as isize) {
                            m = m.max(src[y as usize * w + x as usize]);
                        }
                    }
                    dst[oy * wo + ox] = m;
                }
            }
        });
    out
}

/// Cross-channel local response normalisation:
/// `x / (k + alpha/n * sum_{window} x^2)^beta`, window centred on the channel.
pub(crate) fn lrn(
    input: &[f32],
    s: FeatureShape,
    size: usize,
    alpha: f32,
    beta: f32,
    k: f32,
) -> Vec<f32> {
    let plane = s.height * s.width;
    let c = s.channels;
    let half = (size - 1) / 2;
    let mut out = vec![0f32; input.len()];
    out.par_chunks_mut(c * plane)
        .zip(input.par_chunks(c * plane))
        .for_each(|(dst, src)| {
            for ch in 0..c {
                let lo = ch.saturating_sub(half);
                let hi = (ch + size - half - 1).min(c - 1);
                for p in 0..plane {
                    let mut sq = 0f32;
                    for cc in lo..=hi {
                        let v = src[cc * plane + p];
                        sq += v * v;
                    }
                    let scale = k + alpha / size as f32 * sq;
                    dst[ch * plane + p] = src[ch * plane + p] * scale.powf(-beta);
                }
            }
        });
    out
}

/// Fully connected layer; input is flattened channel-major.
pub(crate) fn fc(
    input: &[f32],
    n: usize,
    fan_in: usize,
    fan_out: usize,
    weights: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let mut out = vec![0f32; n * fan_out];
    out.par_chunks_mut(fan_out)
        .zip(input.par_chunks(fan_in))
        .for_each(|(dst, x)| {
            dst.par_iter_mut().enumerate().for_each(|(o, d)| {
                let wrow = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = 0f32;
                for (a, b) in wrow.iter().zip(x) {
                    acc += a * b;
                }
                *d = acc + bias[o];
            });
        });
    out
}

pub(crate) fn softmax(input: &[f32], n: usize, len: usize) -> Vec<f32> {
    let mut out = vec![0f32; n * len];
    for (dst, src) in out.chunks_mut(len).zip(input.chunks(len)) {
        let max = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0f64;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d as f64;
        }
        for d in dst.iter_mut() {
            *d = (*d as f64 / sum) as f32;
        }
    }
    out
}
