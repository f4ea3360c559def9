use criterion::{black_box, criterion_group, criterion_main, Criterion};
use densetrack_core::geometry::Vec3;
use densetrack_core::metrics::{apd, epe, Thresholds3D, TrackSet};
use rand::{Rng, SeedableRng};

fn tracks(n: usize) -> TrackSet {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut v = || Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..6.0));
    let gt: Vec<Vec3> = (0..n).map(|_| v()).collect();
    let pred = gt.iter().map(|g| g * 1.2 + v() * 0.05).collect();
    TrackSet::new(pred, gt).unwrap()
}

fn metrics(c: &mut Criterion) {
    let t = tracks(65_536);
    let th = Thresholds3D::default();
    c.bench_function("apd 64k", |b| b.iter(|| apd(black_box(&t), &th).unwrap()));
    c.bench_function("epe 64k", |b| b.iter(|| epe(black_box(&t)).unwrap()));
}

criterion_group!(benches, metrics);
criterion_main!(benches);
