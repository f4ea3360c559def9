use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use densetrack_core::harness::gray_batch;
use densetrack_core::model::{ModelConfig, Network, ParamStore};

fn forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let store = ParamStore::init(&cfg, 0).unwrap();
    let net = Network::detached(&cfg, &store).unwrap();
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for frames in [2, 4, 8] {
        let batch = gray_batch(&cfg, frames).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(frames), &batch, |b, batch| {
            b.iter(|| net.forward(black_box(batch), Some(0)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
