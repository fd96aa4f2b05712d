use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use pol_bench::{anchor_observations, rssi_stream};
use pol_core::filters::{Cascade, Smoother};
use pol_core::localization::{multilaterate, PathLossModel};
use pol_core::model::DEFAULT_GRID;
use pol_core::sim::{builtin_scenario, run};
use pol_core::{location_key, Location};

fn bench_location_key(c: &mut Criterion) {
    let at = Location::new(1.25, -3.5, 0.75).unwrap();
    let mut g = c.benchmark_group("location_key");
    for size in [4usize, 64, 1024] {
        let payload = vec![0xa5; size];
        g.throughput(Throughput::Bytes(size as u64));
        g.bench_with_input(BenchmarkId::from_parameter(size), &payload, |b, p| {
            b.iter(|| location_key(black_box(&at), black_box(p), DEFAULT_GRID).unwrap())
        });
    }
    g.finish();
}

fn bench_cascade(c: &mut Criterion) {
    let stream = rssi_stream(10_000);
    let mut g = c.benchmark_group("cascade");
    g.throughput(Throughput::Elements(stream.len() as u64));
    g.bench_function("median5_kalman", |b| {
        b.iter(|| {
            let mut f = Cascade::default();
            stream.iter().fold(0.0, |_, &v| f.step(black_box(v)))
        })
    });
    g.finish();
}

fn bench_multilaterate(c: &mut Criterion) {
    let model = PathLossModel::default();
    let obs = anchor_observations(Location::new(2.0, 3.0, 1.5).unwrap(), &model);
    c.bench_function("multilaterate_4_anchors", |b| b.iter(|| multilaterate(black_box(&obs), &model, None).unwrap()));
}

fn bench_fig7(c: &mut Criterion) {
    let sc = builtin_scenario("paper-fig7").unwrap();
    let mut g = c.benchmark_group("simulation");
    g.sample_size(10);
    g.bench_function("paper_fig7_900_ticks", |b| b.iter(|| run(black_box(&sc)).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_location_key, bench_cascade, bench_multilaterate, bench_fig7);
criterion_main!(benches);
