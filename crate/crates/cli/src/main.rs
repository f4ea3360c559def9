use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use densetrack_core::harness::{
    available_memory, bench_memory, bench_model_config, config_hash, evaluate, fit_slope, generate_data, gray_batch,
    load_scenes, parse_depth_filter, parse_query_counts, plot_memory, prediction_cloud, series, trajectory_overlay,
    unix_now, write_ply, BenchMethod, EvalMode, EvalOptions, MemoryProbe, PeakAlloc, QueryTokenBaseline, RunManifest,
};
use densetrack_core::metrics::{summary_table, write_records, OracleModel, ScaleMode, TrackPredictor};
use densetrack_core::model::{Checkpoint, ModelConfig, Network, NetworkPredictor, ParamStore};
use densetrack_core::synthdata::{load_bundle, read_manifest};
use densetrack_core::training::{load_params, TrainConfig, Trainer};
use densetrack_core::{Error, Result};

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

#[derive(Parser)]
#[command(name = "densetrack", version, about = "Dense 3D tracking and reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives the run manifest.
    #[arg(long)]
    out: PathBuf,
    /// Pin single-threaded, in-order execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Clone)]
struct ModelSource {
    /// Trained checkpoint to evaluate.
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use the ground-truth oracle instead of a network.
    #[arg(long)]
    oracle: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic scene bundles.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Run both training phases.
    Train {
        #[command(flatten)]
        common: Common,
        /// Stop after this many steps.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// APD and EPE tables.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelSource,
        /// Bundle directory, or a directory of per-dataset bundle directories.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "tracking")]
        mode: EvalMode,
        /// Keep ground-truth depths in MIN,MAX (reconstruction mode).
        #[arg(long)]
        depth_filter: Option<String>,
        #[arg(long, default_value = "per-seq")]
        scale_mode: ScaleMode,
    },
    /// Peak memory of dense prediction versus a query-token baseline.
    BenchMem {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1000,10000,50000,all")]
        query_counts: String,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Baseline runs whose buffers would exceed this are recorded as out of memory.
        #[arg(long)]
        budget_mb: Option<usize>,
    },
    /// Export predicted point clouds (PLY) and trajectory overlays (PNG).
    Render {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelSource,
        /// Scene bundle directory.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 4)]
        stride: usize,
        #[arg(long, default_value_t = 8)]
        zoom: u32,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::BenchMem { .. } => "bench-mem",
            Command::Render { .. } => "render",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::BenchMem { common, .. }
            | Command::Render { common, .. } => common,
        }
    }
}

fn read_config(path: &Option<PathBuf>) -> Result<Option<String>> {
    path.as_ref().map(std::fs::read_to_string).transpose().map_err(Error::from)
}

fn train_config(common: &Common) -> Result<(TrainConfig, String)> {
    let mut cfg = match read_config(&common.config)? {
        Some(text) => TrainConfig::from_toml(&text)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.init_seed = seed;
        for d in &mut cfg.datasets {
            d.seed += seed;
        }
    }
    cfg.deterministic |= common.deterministic;
    let text = to_toml(&cfg)?;
    Ok((cfg, text))
}

fn to_toml(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn predictor(src: &ModelSource) -> Result<Box<dyn TrackPredictor>> {
    if src.oracle {
        return Ok(Box::new(OracleModel));
    }
    let path = src
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("pass --checkpoint PATH or --oracle".into()))?;
    let ck = Checkpoint::load(path)?;
    let store = load_params(&ck)?;
    Ok(Box::new(NetworkPredictor {
        network: Network::detached(&ck.config, &store)?,
    }))
}

/// `(dataset name, bundle dirs)`: either `dir`'s bundles, or one entry per
/// subdirectory holding bundles.
fn datasets_under(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.iter().any(|p| read_manifest(p).is_ok()) {
        let name = dir.file_name().map_or("data".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, dir.to_path_buf())]);
    }
    Ok(subdirs
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect())
}

fn run(cmd: &Command) -> Result<(String, u64, Vec<PathBuf>)> {
    let common = cmd.common();
    let out = &common.out;
    std::fs::create_dir_all(out)?;
    match cmd {
        Command::GenData { common } => {
            let (cfg, text) = train_config(common)?;
            let mut outputs = generate_data(&cfg.datasets, out)?;
            println!("wrote {} scene bundles under {}", outputs.len(), out.display());
            let resolved = out.join("config.toml");
            std::fs::write(&resolved, &text)?;
            outputs.push(resolved);
            Ok((text, cfg.seed, outputs))
        }
        Command::Train {
            common,
            max_steps,
            resume,
        } => {
            let (mut trainer, text) = match resume {
                Some(path) => {
                    let ck = Checkpoint::load(path)?;
                    let cfg: TrainConfig = serde_json::from_value(
                        ck.meta
                            .get("train_config")
                            .cloned()
                            .ok_or_else(|| Error::InvalidConfig(format!("{} is not a training checkpoint", path.display())))?,
                    )?;
                    let datasets = cfg.build_datasets()?;
                    let text = to_toml(&cfg)?;
                    (Trainer::resume(&ck, datasets)?, text)
                }
                None => {
                    let (cfg, text) = train_config(common)?;
                    (Trainer::new(cfg)?, text)
                }
            };
            let resolved = out.join("config.toml");
            std::fs::write(&resolved, &text)?;
            trainer = trainer.with_output(out)?;
            let records = trainer.run(*max_steps)?;
            if let Some(last) = records.last() {
                println!(
                    "step {} (phase {}): total loss {:.4}",
                    last.step, last.phase, last.loss["total"]
                );
            }
            let ck = trainer.checkpoint()?;
            let latest = out.join("latest.dtck");
            ck.save(&latest)?;
            let seed = trainer.cfg.seed;
            Ok((text, seed, vec![resolved, out.join("loss.jsonl"), latest]))
        }
        Command::Eval {
            common,
            model,
            data,
            mode,
            depth_filter,
            scale_mode,
        } => {
            let text = read_config(&common.config)?.unwrap_or_default();
            let opts = EvalOptions {
                mode: *mode,
                depth_filter: depth_filter.as_deref().map(parse_depth_filter).transpose()?,
                scale_mode: *scale_mode,
                ..EvalOptions::default()
            };
            let mut model = predictor(model)?;
            let mut records = Vec::new();
            for (name, dir) in datasets_under(data)? {
                let scenes = load_scenes(&dir)?;
                if scenes.is_empty() {
                    continue;
                }
                records.extend(evaluate(model.as_mut(), &scenes, &name, &opts)?);
            }
            if records.is_empty() {
                return Err(Error::EmptyTracks);
            }
            let table = summary_table(&records);
            print!("{table}");
            let jsonl = out.join("metrics.jsonl");
            let mut f = std::fs::File::create(&jsonl)?;
            write_records(&mut f, &records)?;
            let summary = out.join("summary.txt");
            std::fs::write(&summary, table)?;
            Ok((text, common.seed.unwrap_or(0), vec![jsonl, summary]))
        }
        Command::BenchMem {
            common,
            query_counts,
            frames,
            budget_mb,
        } => {
            let (cfg, text) = match read_config(&common.config)? {
                Some(text) => (toml::from_str::<ModelConfig>(&text)?, text),
                None => (bench_model_config(), String::new()),
            };
            let seed = common.seed.unwrap_or(0);
            let counts = parse_query_counts(query_counts)?;
            let store = ParamStore::init(&cfg, seed)?;
            let net = Network::detached(&cfg, &store)?;
            let baseline = QueryTokenBaseline::new(cfg.dim, cfg.patch_size, (*frames).max(1), 2, seed)?;
            let batch = gray_batch(&cfg, *frames)?;
            let budget = budget_mb
                .map(|m| m << 20)
                .or_else(|| available_memory().map(|a| a / 2))
                .unwrap_or(usize::MAX);
            let records = bench_memory(&net, &baseline, &batch, &counts, budget)?;
            let jsonl = out.join("memory.jsonl");
            let mut lines = String::new();
            for r in &records {
                lines.push_str(&serde_json::to_string(r)?);
                lines.push('\n');
                println!(
                    "{:<12} {:>8} queries  {}",
                    serde_json::to_value(r.method)?.as_str().unwrap_or("?"),
                    r.queries,
                    r.peak_bytes.map_or("out of memory".into(), |b| format!("{:.1} MiB", b as f64 / 1048576.0))
                );
            }
            std::fs::write(&jsonl, lines)?;
            for m in [BenchMethod::Dense, BenchMethod::QueryToken] {
                if let Some(s) = fit_slope(&series(&records, m)) {
                    println!("{}: {:.1} bytes per query", serde_json::to_value(m)?.as_str().unwrap_or("?"), s);
                }
            }
            let plot = out.join("memory.png");
            plot_memory(&records, &plot)?;
            Ok((text, seed, vec![jsonl, plot]))
        }
        Command::Render {
            common,
            model,
            scene,
            stride,
            zoom,
        } => {
            let text = read_config(&common.config)?.unwrap_or_default();
            let sample = load_bundle(scene)?;
            let mut model = predictor(model)?;
            let (points, colors) = prediction_cloud(model.as_mut(), &sample)?;
            let ply = out.join("points.ply");
            write_ply(&ply, &points, &colors)?;
            let png = out.join("trajectories.png");
            trajectory_overlay(model.as_mut(), &sample, *stride, *zoom, &png)?;
            println!("wrote {} points to {} and {}", points.len(), ply.display(), png.display());
            Ok((text, common.seed.unwrap_or(0), vec![ply, png]))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = cli.command.common().clone();
    if common.deterministic {
        // candle sizes its CPU thread pool from this variable
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    let manifest_path = common.out.join(densetrack_core::harness::MANIFEST_NAME);
    if manifest_path.exists() {
        eprintln!("error: {}", Error::ManifestExists(manifest_path));
        return ExitCode::FAILURE;
    }
    let started = Instant::now();
    let started_unix = unix_now();
    match run(&cli.command) {
        Ok((text, seed, outputs)) => {
            let method = MemoryProbe::method();
            let manifest = RunManifest {
                command: cli.command.name().into(),
                args: std::env::args().skip(1).collect(),
                config_hash: config_hash(&text),
                seed,
                code_version: env!("CARGO_PKG_VERSION").into(),
                outputs,
                started_unix,
                wall_clock_secs: started.elapsed().as_secs_f64(),
                peak_memory_bytes: PeakAlloc::is_active().then(PeakAlloc::peak),
                memory_method: method,
                deterministic: common.deterministic,
            };
            if let Err(e) = manifest.write(&common.out) {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
