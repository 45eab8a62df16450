use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mixsemi_core::autodiff::Optimizer;
use mixsemi_core::data::{synth_images, two_moons};
use mixsemi_core::mixing::LayerSet;
use mixsemi_core::rng::seeded;
use mixsemi_core::ssl::{train_step, SslConfig};
use mixsemi_core::{Architecture, AugmentPolicy, LayeredNetwork};

fn step_bench(c: &mut Criterion, name: &str, arch: Architecture, x: mixsemi_core::Tensor, y: mixsemi_core::Tensor, cfg: SslConfig) {
    let idx_l: Vec<usize> = (0..32).collect();
    let idx_u: Vec<usize> = (32..64).collect();
    let (lx, ly) = (x.select_rows(&idx_l).unwrap(), y.select_rows(&idx_l).unwrap());
    let ux = x.select_rows(&idx_u).unwrap();
    let mut net = LayeredNetwork::build(&arch, 0).unwrap();
    let mut opt = Optimizer::new(cfg.optimizer, net.params());
    let mut rng = seeded(1);
    c.bench_function(name, |b| {
        b.iter(|| black_box(train_step(&mut net, &mut opt, &lx, &ly, Some(&ux), &cfg, 1e-3, &mut rng).unwrap()))
    });
}

fn moons_step(c: &mut Criterion) {
    let d = two_moons(64, 0.1, 0).unwrap();
    let cfg = SslConfig {
        mix_layers: LayerSet::new(vec![0, 1, 2, 3]).unwrap(),
        augment: AugmentPolicy::PointJitter(0.05),
        ..SslConfig::default()
    };
    step_bench(c, "train_step two-moons mlp 128x3", Architecture::two_moons_default(), d.inputs, d.labels, cfg);
}

fn shapes_step(c: &mut Criterion) {
    let d = synth_images(64, 7, 16, 0).unwrap();
    let cfg = SslConfig {
        mix_layers: LayerSet::new(vec![0, 1, 2]).unwrap(),
        ..SslConfig::default()
    };
    step_bench(c, "train_step shapes cnn 16x16", Architecture::image_default(16, 7), d.inputs, d.labels, cfg);
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = moons_step, shapes_step
}
criterion_main!(benches);
