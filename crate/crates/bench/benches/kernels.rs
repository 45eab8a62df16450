use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mixsemi_core::rng::seeded;
use mixsemi_core::{ParamStore, Tape, Tensor};
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let a = random(&[96, 128], 1);
    let mut store = ParamStore::new();
    store.add("w", random(&[128, 128], 2));
    c.bench_function("matmul 96x128x128 forward+backward", |b| {
        b.iter(|| {
            let mut t = Tape::new();
            let x = t.constant(a.clone());
            let w = t.param(&store, 0);
            let y = t.matmul(x, w).unwrap();
            let s = t.sum(y);
            black_box(t.backward(s, &store).unwrap());
        })
    });
}

fn conv(c: &mut Criterion) {
    let a = random(&[32, 8, 16, 16], 3);
    let mut store = ParamStore::new();
    store.add("k", random(&[16, 8, 3, 3], 4));
    c.bench_function("conv2d 32x8x16x16 -> 16 forward+backward", |b| {
        b.iter(|| {
            let mut t = Tape::new();
            let x = t.constant(a.clone());
            let k = t.param(&store, 0);
            let y = t.conv2d(x, k, 1, 1).unwrap();
            let p = t.max_pool(y, 2).unwrap();
            let s = t.sum(p);
            black_box(t.backward(s, &store).unwrap());
        })
    });
}

criterion_group!(benches, matmul, conv);
criterion_main!(benches);
