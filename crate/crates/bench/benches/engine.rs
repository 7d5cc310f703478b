use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use scopelens::rfest::{discrepancy_map, occluder_grid, FillMode};
use scopelens::simplify::poisson_fill;
use scopelens::synthetic::planted_unit;
use scopelens::{Rng, Tensor};
use scopelens_bench::{alexnet, fill_problem, planted};

fn forward(c: &mut Criterion) {
    let net = alexnet(0);
    let side = net.side();
    let mut rng = Rng::new(1);
    let data: Vec<f32> = (0..3 * side * side).map(|_| rng.next_f64() as f32 - 0.5).collect();
    let batch = Tensor::new(vec![1, 3, side, side], data).unwrap();
    let mut g = c.benchmark_group("forward");
    g.sample_size(10);
    g.bench_function("alexnet_single_image", |b| b.iter(|| net.forward(&batch).unwrap()));
    g.finish();
}

fn occlusion(c: &mut Criterion) {
    let (net, x) = planted();
    let unit = planted_unit();
    let grid = occluder_grid(net.side(), 11, 3).unwrap();
    let mut g = c.benchmark_group("occlusion");
    g.sample_size(10);
    g.bench_function("planted_discrepancy_map", |b| {
        b.iter_batched(
            || Rng::new(7),
            |mut rng| discrepancy_map(&net, &x, 0, &unit, &grid, &mut rng, FillMode::UniformRandom).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn fill(c: &mut Criterion) {
    let mut g = c.benchmark_group("poisson_fill");
    for (side, hole) in [(64, 16), (128, 48)] {
        let (img, mask) = fill_problem(side, hole);
        g.bench_function(format!("{side}px_hole{hole}"), |b| b.iter(|| poisson_fill(&img, &mask).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, forward, occlusion, fill);
criterion_main!(benches);
