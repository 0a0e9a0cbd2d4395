use std::hint::black_box;
use std::sync::Arc;

use codano_core::codano::component_rng;
use codano_core::diff::ParamStore;
use codano_core::field::{fft_forward, GridFunction, Mesh};
use codano_core::gno::{build_neighbors, gno_apply, GnoLayer};
use codano_core::spectral::{fno_apply, Activation, FnoBlock};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn field(n: usize, c: usize) -> GridFunction {
    let mesh = Arc::new(Mesh::periodic_box(vec![n, n]).unwrap());
    GridFunction::from_fn(mesh, c, |x| {
        (0..c).map(|i| ((i + 1) as f64 * x[0]).sin() * x[1].cos()).collect()
    })
    .unwrap()
}

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft_forward");
    for n in [32, 64, 128] {
        let f = field(n, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| fft_forward(black_box(f)).unwrap())
        });
    }
    g.finish();
}

fn fno(c: &mut Criterion) {
    let block = FnoBlock::new("fno", 16, 16, vec![8, 8], true, Activation::Gelu);
    let mut store = ParamStore::new();
    block.init(&mut store, &mut component_rng(0, "bench")).unwrap();
    let mut g = c.benchmark_group("fno_apply");
    for n in [32, 64] {
        let f = field(n, 16);
        g.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| fno_apply(&block, &store, black_box(f)).unwrap())
        });
    }
    g.finish();
}

fn gno(c: &mut Criterion) {
    let layer = GnoLayer::new("gno", 2, 8, 8, &[16]);
    let latent = Arc::new(Mesh::periodic_box(vec![16, 16]).unwrap());
    let radius = 2.5 * std::f64::consts::TAU / 16.0;
    let mut store = ParamStore::new();
    layer.init(&mut store, radius, &mut component_rng(0, "bench")).unwrap();
    let f = field(64, 8);
    c.bench_function("build_neighbors/64_to_16", |b| {
        b.iter(|| build_neighbors(&latent, f.mesh(), radius).unwrap())
    });
    let nbrs = build_neighbors(&latent, f.mesh(), radius).unwrap();
    c.bench_function("gno_apply/64_to_16", |b| {
        b.iter(|| gno_apply(&layer, &store, &nbrs, &latent, black_box(&f)).unwrap())
    });
}

criterion_group!(benches, fft, fno, gno);
criterion_main!(benches);
