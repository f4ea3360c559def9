use std::path::Path;

use candle::Tensor;
use serde::{Deserialize, Serialize};

use super::alloc::{MemoryMethod, MemoryProbe};
use super::baseline::QueryTokenBaseline;
use super::plot::{line_plot, Series};
use crate::error::{Error, Result};
use crate::model::{FrameBatch, ModelConfig, Network};

/// Model used by the memory sweep: ten 256x256 frames, 16-pixel patches and
/// dense heads run one frame at a time.
pub fn bench_model_config() -> ModelConfig {
    ModelConfig {
        image_width: 256,
        image_height: 256,
        patch_size: 16,
        head_chunk: 1,
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryCount {
    Count(usize),
    /// Every pixel of the frame.
    All,
}

impl QueryCount {
    pub fn resolve(self, pixels: usize) -> usize {
        match self {
            QueryCount::Count(n) => n,
            QueryCount::All => pixels,
        }
    }
}

/// Parses a list like `1000,10k,50000,all`.
pub fn parse_query_counts(text: &str) -> Result<Vec<QueryCount>> {
    text.split(',')
        .map(|s| {
            let s = s.trim().to_ascii_lowercase();
            if s == "all" {
                return Ok(QueryCount::All);
            }
            let (digits, mult) = match s.strip_suffix('k') {
                Some(d) => (d, 1000),
                None => (s.as_str(), 1),
            };
            digits
                .parse::<usize>()
                .map(|n| QueryCount::Count(n * mult))
                .map_err(|_| Error::InvalidConfig(format!("bad query count {s:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    Dense,
    QueryToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchStatus {
    Ok,
    /// Skipped because the estimated buffers exceed the memory budget.
    OutOfMemory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub method: BenchMethod,
    pub queries: usize,
    pub frames: usize,
    pub peak_bytes: Option<usize>,
    pub status: BenchStatus,
    pub measurement: MemoryMethod,
}

/// `MemAvailable` from `/proc/meminfo`.
pub fn available_memory() -> Option<usize> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Peak extra memory of the dense forward and of the query-token baseline
/// for each query count. The dense model always predicts every pixel.
pub fn bench_memory(
    net: &Network,
    baseline: &QueryTokenBaseline,
    batch: &FrameBatch,
    query_counts: &[QueryCount],
    budget_bytes: usize,
) -> Result<Vec<MemoryRecord>> {
    let cfg = net.config();
    let (w, h) = (cfg.image_width, cfg.image_height);
    let n = batch.num_frames();
    let measurement = MemoryProbe::method();
    let mut records = Vec::new();
    for qc in query_counts {
        let q = qc.resolve(w * h);
        if q > w * h {
            return Err(Error::InvalidConfig(format!("{q} queries exceed the {} pixels", w * h)));
        }
        let (out, bytes) = MemoryProbe::measure(|| net.forward(batch, Some(0)).map(drop));
        out?;
        records.push(MemoryRecord {
            method: BenchMethod::Dense,
            queries: q,
            frames: n,
            peak_bytes: Some(bytes),
            status: BenchStatus::Ok,
            measurement,
        });

        let queries: Vec<(usize, usize)> = (0..q).map(|k| (k % w, k / w)).collect();
        let estimate = baseline.estimate_bytes(q, n, cfg.num_patches());
        if estimate > budget_bytes {
            log::warn!("query-token baseline with {q} queries needs ~{estimate} bytes; recorded as out of memory");
            records.push(MemoryRecord {
                method: BenchMethod::QueryToken,
                queries: q,
                frames: n,
                peak_bytes: None,
                status: BenchStatus::OutOfMemory,
                measurement,
            });
            continue;
        }
        let (out, bytes) = MemoryProbe::measure(|| -> Result<()> {
            let f = baseline.features(&batch.images, cfg.patch_size)?;
            baseline.track(&f, cfg.grid(), cfg.patch_size, &queries).map(drop)
        });
        out?;
        records.push(MemoryRecord {
            method: BenchMethod::QueryToken,
            queries: q,
            frames: n,
            peak_bytes: Some(bytes),
            status: BenchStatus::Ok,
            measurement,
        });
    }
    Ok(records)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// `(queries, bytes)` of the successful measurements of one method.
pub fn series(records: &[MemoryRecord], method: BenchMethod) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.peak_bytes.map(|b| (r.queries as f64, b as f64)))
        .collect()
}

/// Dense series in blue, baseline in red.
pub fn plot_memory(records: &[MemoryRecord], path: &Path) -> Result<()> {
    line_plot(
        &[
            Series {
                color: [30, 90, 200],
                points: series(records, BenchMethod::Dense),
            },
            Series {
                color: [210, 40, 40],
                points: series(records, BenchMethod::QueryToken),
            },
        ],
        480,
        320,
        path,
    )
}

/// A `[N, 3, H, W]` batch of mid-gray frames with centered intrinsics.
pub fn gray_batch(cfg: &ModelConfig, frames: usize) -> Result<FrameBatch> {
    let k = crate::geometry::Intrinsics::centered(
        cfg.image_width as f64,
        cfg.image_width as f64,
        cfg.image_width,
        cfg.image_height,
    )?;
    let images = Tensor::full(0.5f32, (frames, 3, cfg.image_height, cfg.image_width), &candle::Device::Cpu)?;
    FrameBatch::new(images, vec![k; frames])
}
