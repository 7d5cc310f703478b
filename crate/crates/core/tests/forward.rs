mod common;

use proptest::prelude::*;
use scopelens::net::ForwardOptions;
use scopelens::{Network, NetworkSpec, Rng, Tensor, WeightStore};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn engine_matches_direct_definition(seed in any::<u64>(), head in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let spec = common::random_spec(&mut rng, head);
        let (err, _) = common::forward_error(&spec, &mut rng);
        prop_assert!(err <= 1e-5, "relative error {err} for {}", spec.to_json());
    }

    #[test]
    fn samples_in_a_batch_are_independent(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let spec = common::random_spec(&mut rng, true);
        let side = spec.input.side;
        let net = Network::new(spec.clone(), WeightStore::random(&spec, &mut rng)).unwrap();
        let a = common::random_input(&mut rng, side);
        let b = common::random_input(&mut rng, side);
        let solo = net.forward(&a).unwrap();
        let pair = net
            .forward(&Tensor::stack(&[a.reshape(vec![3, side, side]).unwrap(), b.reshape(vec![3, side, side]).unwrap()]).unwrap())
            .unwrap();
        let first = &pair.last().data()[..solo.last().len()];
        prop_assert_eq!(first, solo.last().data());
    }
}

#[test]
fn output_is_independent_of_thread_count() {
    let mut rng = Rng::new(11);
    let spec = common::random_spec(&mut rng, true);
    let net = Network::new(spec.clone(), WeightStore::random(&spec, &mut rng)).unwrap();
    let input = common::random_input(&mut rng, spec.input.side);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| net.forward(&input).unwrap().last().data().to_vec())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn bundled_network_produces_a_distribution() {
    let spec = NetworkSpec::places_alexnet(205);
    let mut rng = Rng::new(0);
    let net = Network::new(spec.clone(), WeightStore::random(&spec, &mut rng)).unwrap();
    let img = common::random_image(&mut rng, 300, 200);
    let probs = net.classify(&img).unwrap();
    assert_eq!(probs.len(), 205);
    let sum: f32 = probs.iter().sum();
    assert!((sum - 1.0).abs() < 1e-4);
    assert!(probs.iter().all(|&p| p >= 0.0));
}

#[test]
fn stop_after_truncates_the_trace() {
    let spec = NetworkSpec::places_alexnet(205);
    let net = Network::new(spec.clone(), WeightStore::random(&spec, &mut Rng::new(1))).unwrap();
    let input = common::random_input(&mut Rng::new(2), 227);
    let opts = ForwardOptions {
        keep_pre_activations: true,
        stop_after: Some("conv2".into()),
    };
    let trace = net.forward_with(&input, &opts).unwrap();
    assert_eq!(trace.layers().count(), 4);
    assert_eq!(trace.get("conv2").unwrap().shape(), &[1, 256, 27, 27]);
    assert!(trace.pre_activation("conv2").unwrap().data().iter().any(|&v| v < 0.0));
}

#[test]
fn occluders_outside_the_field_change_nothing() {
    let mut rng = Rng::new(77);
    let mut tested = 0;
    for _ in 0..20 {
        let (n, nonzero) = common::locality_case(&mut rng, 20);
        assert_eq!(nonzero, 0);
        tested += n;
    }
    assert!(tested > 100);
}
