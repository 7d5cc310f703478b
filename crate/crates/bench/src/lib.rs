//! Fixtures shared by the criterion benches in `benches/`.

use scopelens::synthetic::{planted_dataset, planted_detector, PLANTED_SIDE};
use scopelens::{Image, Mask, Network, NetworkSpec, Rng, Tensor, WeightStore};

/// The bundled AlexNet layout with seeded random weights.
pub fn alexnet(seed: u64) -> Network {
    let spec = NetworkSpec::parse(NetworkSpec::bundled_json()).expect("bundled spec parses");
    let weights = WeightStore::random(&spec, &mut Rng::new(seed));
    Network::new(spec, weights).expect("random weights match the spec")
}

/// Planted detector and one preprocessed image that contains the pattern.
pub fn planted() -> (Network, Tensor) {
    let net = planted_detector(PLANTED_SIDE, false).expect("planted detector builds");
    let img = planted_dataset(1, PLANTED_SIDE, 8)
        .into_iter()
        .find(|p| !p.boxes.is_empty())
        .expect("some image has a pattern")
        .image;
    let x = net.preprocess(&img);
    (net, x)
}

/// Smooth colour ramp with a centred square hole of side `hole`.
pub fn fill_problem(side: usize, hole: usize) -> (Image, Mask) {
    let mut img = Image::filled(side, side, [0, 0, 0]);
    for y in 0..side {
        for x in 0..side {
            let r = (255 * x / side) as u8;
            let g = (255 * y / side) as u8;
            img.set(x, y, [r, g, r / 2 + g / 2]);
        }
    }
    let mut mask = Mask::new(side, side);
    let lo = (side - hole) / 2;
    mask.fill_box(lo, lo, lo + hole - 1, lo + hole - 1);
    (img, mask)
}
