//! Criterion benchmarks for the model, the scene generator and the metrics.
//! See `benches/`.

pub use densetrack_core as core;
