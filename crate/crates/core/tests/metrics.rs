mod common;

use proptest::prelude::*;
use scopelens::image::Mask;
use scopelens::metrics::{jaccard, pearson, pr_ap, quantile};

#[test]
fn ap_equals_brute_force_on_every_strict_ranking() {
    for n in 1..=8usize {
        for bits in 1u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let got = pr_ap(&scores, &labels).unwrap().average_precision;
            assert!((got - common::brute_ap(&scores, &labels)).abs() < 1e-12);
        }
    }
}

#[test]
fn ap_equals_brute_force_with_ties() {
    for n in 1..=6usize {
        for bits in 1u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            for code in 0..3usize.pow(n as u32) {
                let scores: Vec<f64> = (0..n).map(|i| (code / 3usize.pow(i as u32) % 3) as f64).collect();
                let got = pr_ap(&scores, &labels).unwrap().average_precision;
                assert!((got - common::brute_ap(&scores, &labels)).abs() < 1e-12);
            }
        }
    }
}

fn mask_strategy(n: usize) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(any::<bool>(), n * n).prop_map(move |b| Mask::from_bits(n, n, b).unwrap())
}

proptest! {
    #[test]
    fn jaccard_is_symmetric_and_bounded(a in mask_strategy(6), b in mask_strategy(6)) {
        let ab = jaccard(&a, &b).unwrap();
        prop_assert_eq!(ab, jaccard(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn pearson_is_affine_invariant(
        xy in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
        a in 0.01f64..50.0,
        b in -100.0f64..100.0,
    ) {
        let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson(&x, &y) {
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&scaled, &y).unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn ap_ignores_input_order(
        items in proptest::collection::vec((0u8..5, any::<bool>()), 1..12),
        rot in 0usize..12,
    ) {
        prop_assume!(items.iter().any(|i| i.1));
        let scores: Vec<f64> = items.iter().map(|i| i.0 as f64).collect();
        let labels: Vec<bool> = items.iter().map(|i| i.1).collect();
        let k = rot % items.len();
        let mut s2 = scores.clone();
        let mut l2 = labels.clone();
        s2.rotate_left(k);
        l2.rotate_left(k);
        let a = pr_ap(&scores, &labels).unwrap().average_precision;
        let b = pr_ap(&s2, &l2).unwrap().average_precision;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn median_matches_sort_oracle(values in proptest::collection::vec(-1e3f32..1e3, 1..50)) {
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let expected = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        };
        prop_assert!((quantile(&values, 0.5).unwrap() as f64 - expected).abs() < 1e-3);
    }
}
