//! Hand-built networks and data with known answers.
//!
//! * A planted detector whose `conv3:0` unit fires only where a fixed 16x16
//!   binary pattern sits exactly under its receptive field.
//! * A texture classifier whose class scores measure high-frequency energy in
//!   each colour channel, used to exercise the simplifier.
//! * A small annotated scene dataset for the emergence statistics.

use crate::emergence::{AnnotatedImage, ObjectInstance};
use crate::error::Result;
use crate::image::Image;
use crate::net::forward::Network;
use crate::net::spec::{InputSpec, LayerOp, LayerSpec, NetworkSpec, Unit};
use crate::net::weights::{bias_name, kernel_name, WeightStore};
use crate::rng::Rng;
use crate::segmenter::PixelBox;
use crate::simplify::{grid_segments, SegmentMap};
use crate::tensor::Tensor;

pub const PATTERN: usize = 16;
pub const PLANTED_SIDE: usize = 64;
const PATTERN_SEED: u64 = 0x5EED_0F_F1CE;
const BACKGROUND: (u8, u8) = (96, 160);

/// The planted pattern, row-major, `true` = white.
pub fn pattern_bits() -> Vec<bool> {
    let mut rng = Rng::new(PATTERN_SEED);
    (0..PATTERN * PATTERN).map(|_| rng.next_u64() >> 63 == 1).collect()
}

/// The detector unit.
pub fn planted_unit() -> Unit {
    Unit::new("conv3", 0)
}

fn conv(name: &str, kernel: usize, padding: usize, channels_out: usize) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        op: LayerOp::Conv {
            kernel,
            stride: 1,
            padding,
            channels_out,
            groups: 1,
            relu: true,
        },
    }
}

/// Three conv layers; with `classifier`, an fc + softmax head over two
/// classes ("pattern", "background") is appended.
pub fn planted_detector_spec(side: usize, classifier: bool) -> Result<NetworkSpec> {
    let mut layers = vec![conv("conv1", PATTERN, 0, 2), conv("conv2", 3, 1, 2), conv("conv3", 1, 0, 2)];
    if classifier {
        layers.push(LayerSpec {
            name: "fc".into(),
            op: LayerOp::Fc {
                channels_out: 2,
                relu: false,
            },
        });
        layers.push(LayerSpec {
            name: "prob".into(),
            op: LayerOp::Softmax,
        });
    }
    let mut spec = NetworkSpec::new("planted-detector", InputSpec { channels: 3, side }, layers)?;
    spec.mean = [128.0; 3];
    if classifier {
        spec.labels = vec!["pattern".into(), "background".into()];
    }
    Ok(spec)
}

/// Channel 0 of `conv1` is a matched filter for the pattern with bias -1/2
/// (a perfect match scores about 1); channel 1 matches the inverted pattern.
/// Later layers pass both channels through unchanged.
pub fn planted_detector(side: usize, classifier: bool) -> Result<Network> {
    let spec = planted_detector_spec(side, classifier)?;
    let bits = pattern_bits();
    let k = PATTERN;
    let scale = 1.0 / (3.0 * (k * k) as f32 * 127.5);
    let mut w1 = vec![0f32; 2 * 3 * k * k];
    for o in 0..2 {
        for c in 0..3 {
            for (i, &b) in bits.iter().enumerate() {
                let s = if b { 1.0 } else { -1.0 };
                w1[(o * 3 + c) * k * k + i] = if o == 0 { s } else { -s } * scale;
            }
        }
    }
    let mut ws = WeightStore::new();
    ws.insert(kernel_name("conv1"), Tensor::new(vec![2, 3, k, k], w1)?);
    ws.insert(bias_name("conv1"), Tensor::new(vec![2], vec![-0.5; 2])?);

    let mut w2 = vec![0f32; 2 * 2 * 9];
    w2[4] = 1.0;
    w2[(2 + 1) * 9 + 4] = 1.0;
    ws.insert(kernel_name("conv2"), Tensor::new(vec![2, 2, 3, 3], w2)?);
    ws.insert(bias_name("conv2"), Tensor::zeros(vec![2]));
    ws.insert(kernel_name("conv3"), Tensor::new(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0])?);
    ws.insert(bias_name("conv3"), Tensor::zeros(vec![2]));

    if classifier {
        let shape = spec.output_shape("conv3")?;
        let plane = shape.height * shape.width;
        let mut wf = vec![0f32; 2 * shape.len()];
        wf[..plane].fill(10.0);
        ws.insert(kernel_name("fc"), Tensor::new(vec![2, shape.len()], wf)?);
        ws.insert(bias_name("fc"), Tensor::new(vec![2], vec![0.0, 1.0])?);
    }
    Network::new(spec, ws)
}

/// Noisy gray background.
pub fn background(rng: &mut Rng, side: usize) -> Image {
    let (lo, hi) = BACKGROUND;
    let span = (hi - lo) as u64 + 1;
    let pixels = (0..side * side)
        .map(|_| {
            let mut px = [0u8; 3];
            for v in px.iter_mut() {
                *v = lo + rng.below(span) as u8;
            }
            px
        })
        .collect();
    Image::new(side, side, pixels).expect("non-empty image")
}

/// Draw the pattern with its top-left corner at `(x, y)`.
pub fn paste_pattern(img: &mut Image, x: usize, y: usize) -> PixelBox {
    for (i, &b) in pattern_bits().iter().enumerate() {
        let v = if b { 255 } else { 0 };
        img.set(x + i % PATTERN, y + i / PATTERN, [v; 3]);
    }
    PixelBox {
        x0: x,
        y0: y,
        x1: x + PATTERN - 1,
        y1: y + PATTERN - 1,
    }
}

#[derive(Debug, Clone)]
pub struct PlantedImage {
    pub image: Image,
    pub boxes: Vec<PixelBox>,
}

fn separated(a: &PixelBox, b: &PixelBox, gap: usize) -> bool {
    a.x1 + gap < b.x0 || b.x1 + gap < a.x0 || a.y1 + gap < b.y0 || b.y1 + gap < a.y0
}

/// Background with `count` non-overlapping pattern copies at random spots.
pub fn planted_image(rng: &mut Rng, side: usize, count: usize) -> PlantedImage {
    let mut image = background(rng, side);
    let mut boxes: Vec<PixelBox> = Vec::with_capacity(count);
    let room = (side - PATTERN + 1) as u64;
    while boxes.len() < count {
        let (x, y) = (rng.below(room) as usize, rng.below(room) as usize);
        let candidate = PixelBox {
            x0: x,
            y0: y,
            x1: x + PATTERN - 1,
            y1: y + PATTERN - 1,
        };
        if boxes.iter().all(|b| separated(b, &candidate, 2)) {
            boxes.push(paste_pattern(&mut image, x, y));
        }
    }
    PlantedImage { image, boxes }
}

/// `n` images with 0, 1 or 2 patterns (about 10% / 70% / 20%).
pub fn planted_dataset(seed: u64, side: usize, n: usize) -> Vec<PlantedImage> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let roll = rng.below(10);
            let count = match roll {
                0 => 0,
                1 | 2 => 2,
                _ => 1,
            };
            planted_image(&mut rng, side, count)
        })
        .collect()
}

/// Texture classes of [`texture_classifier`].
pub const TEXTURE_CLASSES: [&str; 4] = ["red", "green", "blue", "plain"];
pub const TEXTURE_SIDE: usize = 48;

/// Per colour channel, `conv1` holds a 4-neighbour Laplacian and its negation,
/// so after rectification the pair sums to `|laplacian|`. The fc layer adds
/// the interior energy of each colour into its class; "plain" is a constant
/// bias that wins when there is little texture.
pub fn texture_classifier(side: usize) -> Result<Network> {
    let layers = vec![
        conv("conv1", 3, 1, 6),
        LayerSpec {
            name: "fc".into(),
            op: LayerOp::Fc {
                channels_out: 4,
                relu: false,
            },
        },
        LayerSpec {
            name: "prob".into(),
            op: LayerOp::Softmax,
        },
    ];
    let mut spec = NetworkSpec::new("texture-classifier", InputSpec { channels: 3, side }, layers)?;
    spec.mean = [128.0; 3];
    spec.labels = TEXTURE_CLASSES.iter().map(|s| s.to_string()).collect();

    let lap = [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0];
    let mut w1 = vec![0f32; 6 * 3 * 9];
    for c in 0..3 {
        for (i, &v) in lap.iter().enumerate() {
            w1[((2 * c) * 3 + c) * 9 + i] = v;
            w1[((2 * c + 1) * 3 + c) * 9 + i] = -v;
        }
    }
    let plane = side * side;
    let alpha = 1.0 / (25.0 * plane as f32);
    let mut wf = vec![0f32; 4 * 6 * plane];
    for class in 0..3 {
        for ch in [2 * class, 2 * class + 1] {
            for y in 1..side - 1 {
                for x in 1..side - 1 {
                    wf[class * 6 * plane + ch * plane + y * side + x] = alpha;
                }
            }
        }
    }
    let mut ws = WeightStore::new();
    ws.insert(kernel_name("conv1"), Tensor::new(vec![6, 3, 3, 3], w1)?);
    ws.insert(bias_name("conv1"), Tensor::zeros(vec![6]));
    ws.insert(kernel_name("fc"), Tensor::new(vec![4, 6 * plane], wf)?);
    ws.insert(bias_name("fc"), Tensor::new(vec![4], vec![0.0, 0.0, 0.0, 1.0])?);
    Network::new(spec, ws)
}

/// Segment fill styles for [`textured_image`]; 0..3 are textured colours,
/// 3 is flat gray, 4 a smooth gradient.
pub const PLAIN: u8 = 3;
pub const GRADIENT: u8 = 4;

/// Paint each segment with the given style.
pub fn textured_image(rng: &mut Rng, segments: &SegmentMap, styles: &[u8]) -> Image {
    let (w, h) = (segments.width(), segments.height());
    let mut img = Image::filled(w, h, [128; 3]);
    for y in 0..h {
        for x in 0..w {
            let style = styles[segments.label_at(x, y) as usize];
            let mut px = [128u8; 3];
            match style {
                0..=2 => px[style as usize] = 68 + rng.below(121) as u8,
                GRADIENT => {
                    let v = 96 + (64 * x / w.max(1)) as u8;
                    px = [v, v, v];
                }
                _ => {}
            }
            img.set(x, y, px);
        }
    }
    img
}

/// An `n x n` grid image with random styles per segment.
pub fn textured_scene(rng: &mut Rng, side: usize, n: usize) -> (Image, SegmentMap, Vec<u8>) {
    let segments = grid_segments(side, side, n);
    let styles: Vec<u8> = (0..segments.segment_count()).map(|_| rng.below(5) as u8).collect();
    let img = textured_image(rng, &segments, &styles);
    (img, segments, styles)
}

/// Scenes and their object-class probabilities for [`emergence_dataset`].
const SCENES: [(&str, [f64; 4]); 3] = [
    ("bedroom", [0.9, 0.8, 0.2, 0.1]),
    ("kitchen", [0.8, 0.1, 0.9, 0.2]),
    ("street", [0.2, 0.05, 0.1, 0.9]),
];
const OBJECTS: [&str; 4] = ["wall", "bed", "stove", "car"];

/// Random 3-scene / 4-object annotated dataset; images are 32x32.
pub fn emergence_dataset(seed: u64, n: usize) -> Vec<AnnotatedImage> {
    let mut rng = Rng::new(seed);
    let side = 32;
    (0..n)
        .map(|i| {
            let (scene, probs) = SCENES[i % SCENES.len()];
            let mut budget = side * side;
            let mut instances = Vec::new();
            for (o, &p) in OBJECTS.iter().zip(&probs) {
                let copies = (0..2).filter(|_| rng.next_f64() < p).count();
                for _ in 0..copies {
                    let px = (rng.below(200) as usize + 1).min(budget);
                    budget -= px;
                    instances.push(ObjectInstance {
                        class: o.to_string(),
                        label_id: instances.len() as u16 + 1,
                        pixels: px,
                    });
                }
            }
            AnnotatedImage::new(format!("img{i:04}"), scene, side, side, instances).expect("valid synthetic image")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::rf::theoretical_rf;

    #[test]
    fn pattern_has_low_self_similarity_off_alignment() {
        let bits = pattern_bits();
        let s = |b: bool| if b { 1.0 } else { -1.0 };
        for dy in -15i32..=15 {
            for dx in -15i32..=15 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let mut acc = 0.0;
                for y in 0..16i32 {
                    for x in 0..16i32 {
                        let (u, v) = (x + dx, y + dy);
                        if (0..16).contains(&u) && (0..16).contains(&v) {
                            acc += s(bits[(y * 16 + x) as usize]) * s(bits[(v * 16 + u) as usize]);
                        }
                    }
                }
                assert!(acc / 256.0 < 0.4, "shift ({dx},{dy}) correlates {acc}");
            }
        }
    }

    #[test]
    fn detector_fires_only_on_the_pattern() {
        let net = planted_detector(PLANTED_SIDE, false).unwrap();
        let mut rng = Rng::new(3);
        let p = planted_image(&mut rng, PLANTED_SIDE, 1);
        let trace = net.forward(&net.preprocess(&p.image).reshape(vec![1, 3, 64, 64]).unwrap()).unwrap();
        let map = trace.feature_map(&planted_unit(), 0).unwrap();
        let w = 64 - PATTERN + 1;
        let on: Vec<usize> = (0..map.len()).filter(|&i| map[i] > 0.0).collect();
        assert_eq!(on, vec![p.boxes[0].y0 * w + p.boxes[0].x0]);
        assert!(map[on[0]] > 0.45);
    }

    #[test]
    fn detector_rf_is_eighteen() {
        let spec = planted_detector_spec(PLANTED_SIDE, false).unwrap();
        assert_eq!(theoretical_rf(&spec, "conv3").unwrap().size, 18);
    }

    #[test]
    fn classifier_head_separates() {
        let net = planted_detector(PLANTED_SIDE, true).unwrap();
        let mut rng = Rng::new(4);
        let with = planted_image(&mut rng, PLANTED_SIDE, 1).image;
        let without = background(&mut rng, PLANTED_SIDE);
        let a = net.classify(&with).unwrap();
        let b = net.classify(&without).unwrap();
        assert!(a[0] > a[1]);
        assert!(b[1] > b[0]);
    }

    #[test]
    fn texture_classifier_follows_texture() {
        let net = texture_classifier(TEXTURE_SIDE).unwrap();
        let mut rng = Rng::new(1);
        let segs = grid_segments(TEXTURE_SIDE, TEXTURE_SIDE, 2);
        for (styles, expect) in [
            (vec![0, 0, PLAIN, PLAIN], 0),
            (vec![1, 1, 1, GRADIENT], 1),
            (vec![2, 2, 0, PLAIN], 2),
            (vec![PLAIN, GRADIENT, PLAIN, PLAIN], 3),
        ] {
            let img = textured_image(&mut rng, &segs, &styles);
            let p = net.classify(&img).unwrap();
            let top = (0..4).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
            assert_eq!(top, expect, "styles {styles:?} -> {p:?}");
        }
    }

    #[test]
    fn emergence_dataset_is_valid() {
        let d = emergence_dataset(0, 30);
        assert_eq!(d.len(), 30);
        assert!(d.iter().all(|i| i.instances.iter().map(|x| x.pixels).sum::<usize>() <= 1024));
    }
}
