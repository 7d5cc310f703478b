mod common;

use proptest::prelude::*;
use scopelens::image::{decode_ppm, encode_ppm, preprocess};
use scopelens::{Image, Rng};

fn image_strategy() -> impl Strategy<Value = Image> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<[u8; 3]>(), w * h).prop_map(move |p| Image::new(w, h, p).unwrap())
    })
}

proptest! {
    #[test]
    fn ppm_round_trips(img in image_strategy()) {
        let bytes = encode_ppm(&img);
        prop_assert_eq!(decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn preprocess_subtracts_the_mean(img in image_strategy(), m in any::<[u8; 3]>()) {
        let mean = [m[0] as f32, m[1] as f32, m[2] as f32];
        let raw = preprocess(&img, 7, [0.0; 3]);
        let centred = preprocess(&img, 7, mean);
        for c in 0..3 {
            for i in 0..49 {
                let a = raw.data()[c * 49 + i] - mean[c];
                prop_assert!((a - centred.data()[c * 49 + i]).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn halving_resize_is_a_box_average() {
    let mut rng = Rng::new(5);
    let img = common::random_image(&mut rng, 454, 454);
    let t = preprocess(&img, 227, [0.0; 3]);
    let plane = 227 * 227;
    for c in 0..3 {
        for y in 0..227 {
            for x in 0..227 {
                let mut s = 0.0f64;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    s += img.get(2 * x + dx, 2 * y + dy)[c] as f64;
                }
                let got = t.data()[c * plane + y * 227 + x] as f64;
                assert!((got - s / 4.0).abs() < 1e-3, "({x},{y},{c}) {got} vs {}", s / 4.0);
            }
        }
    }
}

#[test]
fn identity_resize_keeps_pixels() {
    let img = common::random_image(&mut Rng::new(6), 9, 9);
    let t = preprocess(&img, 9, [0.0; 3]);
    for y in 0..9 {
        for x in 0..9 {
            assert_eq!(t.data()[y * 9 + x], img.get(x, y)[0] as f32);
        }
    }
}

#[test]
fn splitmix_matches_golden_vector() {
    let text = include_str!("data/splitmix64_seed0.txt");
    let mut rng = Rng::new(0);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let want = u64::from_str_radix(line.trim().trim_start_matches("0x"), 16).unwrap();
        assert_eq!(rng.next_u64(), want);
    }
}
