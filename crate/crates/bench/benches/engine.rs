use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use prunelab_bench::{batch, mlp};
use prunelab_core::ap::ap_select_count;
use prunelab_core::dnr::compute_dnr;
use prunelab_core::mask::select_count;
use prunelab_core::nn::{backward, forward, init_params};
use prunelab_core::{MaskState, PruneMethod, SnapshotTag};

fn engine(c: &mut Criterion) {
    let net = mlp(&[784, 128, 64, 10], 1);
    let masks = MaskState::new(&net);
    let (x, y) = batch(64, 784, 10, 2);
    c.bench_function("forward 784-128-64-10 x64", |b| b.iter(|| forward(black_box(&net), &x, false).unwrap()));
    c.bench_function("backward 784-128-64-10 x64", |b| {
        b.iter(|| backward(black_box(&net), &masks, &x, &y).unwrap())
    });
}

fn selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("select 20%");
    let net = mlp(&[784, 128, 64, 10], 3);
    let masks = MaskState::new(&net);
    let k = masks.remaining() / 5;
    for method in [PruneMethod::GlobalMagnitude, PruneMethod::Lamp] {
        group.bench_with_input(BenchmarkId::from_parameter(method.name()), &method, |b, &m| {
            b.iter(|| select_count(m, black_box(&net), &masks, k, None).unwrap())
        });
    }
    let init = net.snapshot(SnapshotTag::Init);
    let mut trained = net.clone();
    init_params(&mut trained, 4);
    let fin = trained.snapshot(SnapshotTag::Converged);
    group.bench_function("ap q=2", |b| {
        b.iter(|| ap_select_count(&init, black_box(&fin), &masks, masks.remaining() / 50, false).unwrap())
    });
    group.finish();
}

fn dnr(c: &mut Criterion) {
    let net = mlp(&[784, 128, 64, 10], 5);
    let masks = MaskState::new(&net);
    let (x, _) = batch(1000, 784, 10, 6);
    c.bench_function("dnr 1000 samples", |b| b.iter(|| compute_dnr(black_box(&net), &masks, &x).unwrap()));
}

criterion_group!(benches, engine, selection, dnr);
criterion_main!(benches);
