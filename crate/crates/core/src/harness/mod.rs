//! Run plumbing shared by the command-line tool and benchmarks: memory
//! accounting, run manifests, the query-token baseline and memory sweep,
//! evaluation drivers and exports.

mod alloc;
mod baseline;
mod bench;
mod eval;
mod manifest;
mod plot;
mod render;

pub use alloc::{resident_bytes, MemoryMethod, MemoryProbe, PeakAlloc};
pub use baseline::QueryTokenBaseline;
pub use bench::{
    available_memory, bench_memory, bench_model_config, fit_slope, gray_batch, parse_query_counts, plot_memory,
    series, BenchMethod, BenchStatus, MemoryRecord, QueryCount,
};
pub use eval::{evaluate, generate_data, load_scenes, parse_depth_filter, EvalMode, EvalOptions};
pub use manifest::{config_hash, unix_now, RunManifest, MANIFEST_NAME};
pub use plot::{line_plot, Series};
pub use render::{prediction_cloud, trajectory_overlay, write_ply};
