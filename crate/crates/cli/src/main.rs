//! `rpk`: scene generation, inference, evaluation, counting, benchmarks and
//! self-checks for the radarpillars crate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use radarpillars::analysis::{
    benchmark_attention, evaluate_ap, weight_magnitude_stats, Region, RegionFilter, DEFAULT_IOU_THRESHOLDS,
};
use radarpillars::attention::AttentionConfig;
use radarpillars::nn::{count_flops, count_params, init_weights, AttentionVariant, ModelConfig, WeightStore, DEFAULT_TOKENS};
use radarpillars::pipeline::{FrameOutput, Model};
use radarpillars::radar_io::{
    generate_scene, parse_detections, parse_frame, parse_labels, serialize_frame, write_detections, write_labels,
    SceneSpec,
};
use radarpillars::selfcheck::{run_selfcheck, SelfCheckOptions};

#[derive(Parser)]
#[command(name = "rpk", version, about = "Pillar-based 4D radar detection toolkit")]
struct Cli {
    /// Worker threads for per-frame parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model config JSON; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "radarpillars-c32")]
    preset: String,
    /// Attention variant: none, pillar, point_unmasked, point_masked, feature_late.
    #[arg(long)]
    variant: Option<String>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(path) => ModelConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ModelConfig::preset(&self.preset)?,
        };
        if let Some(v) = &self.variant {
            cfg.attention.variant = AttentionVariant::parse(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes: frame CSVs, label JSONL and a manifest.
    Gen {
        /// Scene parameters as JSON; the seed inside is ignored.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the detector on frame CSVs and write `<stem>.dets.jsonl` per frame.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        /// Weight directory (manifest.json + weights.bin).
        #[arg(long, conflicts_with = "seed")]
        weights: Option<PathBuf>,
        /// Initialize weights from this seed instead of loading them.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        float64: bool,
        #[arg(long)]
        out: PathBuf,
        /// Frame CSV files or directories containing them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Average precision of detections against labels, entire area and corridor.
    Eval {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        /// Corridor as `x_min,x_max,y_min,y_max`.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        corridor: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter counts per component as JSON.
    Params {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Multiply-accumulate and FLOP counts per component as JSON.
    Flops {
        #[command(flatten)]
        model: ModelArgs,
        /// Occupied pillars assumed for the attention and pillar encoder terms.
        #[arg(long, default_value_t = DEFAULT_TOKENS)]
        tokens: usize,
    },
    /// Time the attention block over token counts.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
        p: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for bench.json and bench.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer weight-magnitude statistics.
    AnalyzeWeights {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, conflicts_with = "seed")]
        weights: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for magnitudes.json and magnitudes.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fixed-seed oracle suites; exit 1 on any failure.
    Selfcheck {
        #[arg(long)]
        float64: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also validate this weight directory against the model config.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Thread pool honoring `--jobs`, capped by `RPK_THREADS` when set.
fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let cap = match std::env::var("RPK_THREADS") {
        Ok(v) => Some(v.parse::<usize>().with_context(|| format!("RPK_THREADS={v}"))?.max(1)),
        Err(_) => None,
    };
    let n = match (jobs, cap) {
        (Some(j), Some(c)) => j.min(c),
        (Some(j), None) => j,
        (None, Some(c)) => c,
        (None, None) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
}

fn cmd_gen(config: Option<&Path>, n: usize, seed: u64, out: &Path) -> Result<()> {
    let base: SceneSpec = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SceneSpec::default(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let spec = SceneSpec { seed: seed.wrapping_add(i as u64), ..base.clone() };
        let (frame, boxes) = generate_scene(&spec)?;
        let stem = format!("frame_{i:05}");
        write(&out.join(format!("{stem}.csv")), &serialize_frame(&frame))?;
        write(&out.join(format!("{stem}.labels.jsonl")), &write_labels(&boxes))?;
        frames.push(serde_json::json!({ "stem": stem, "seed": spec.seed, "points": frame.len(), "objects": boxes.len() }));
    }
    let manifest = serde_json::json!({ "seed": seed, "frames": frames });
    write(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    eprintln!("wrote {n} frames to {}", out.display());
    Ok(())
}

fn collect_frames(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn load_store(cfg: &ModelConfig, weights: Option<&Path>, seed: Option<u64>) -> Result<WeightStore> {
    match (weights, seed) {
        (Some(dir), None) => Ok(WeightStore::load(dir).with_context(|| format!("loading weights from {}", dir.display()))?),
        (None, Some(seed)) => Ok(init_weights(cfg, seed)),
        _ => bail!("provide exactly one of --weights or --seed"),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into())
}

fn run_frames<T: radarpillars::nn::Scalar>(
    model: &Model<T>,
    files: &[PathBuf],
    out: &Path,
    pool: &rayon::ThreadPool,
) -> Result<Vec<FrameOutput>> {
    pool.install(|| {
        files
            .par_iter()
            .map(|path| -> Result<FrameOutput> {
                let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                let mut frame = parse_frame(&bytes).with_context(|| format!("parsing {}", path.display()))?;
                frame.frame_id = stem(path);
                let result = model.infer(&frame).with_context(|| format!("inferring {}", path.display()))?;
                write(&out.join(format!("{}.dets.jsonl", frame.frame_id)), &write_detections(&result.detections))?;
                Ok(result)
            })
            .collect()
    })
}

fn is_shape_error(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| matches!(c.downcast_ref::<radarpillars::Error>(), Some(radarpillars::Error::Shape(_))))
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    model_args: &ModelArgs,
    weights: Option<&Path>,
    seed: Option<u64>,
    float64: bool,
    out: &Path,
    inputs: &[PathBuf],
    jobs: Option<usize>,
) -> Result<()> {
    let cfg = model_args.resolve()?;
    let store = load_store(&cfg, weights, seed)?;
    let files = collect_frames(inputs)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pool = pool(jobs)?;
    let outputs = if float64 {
        run_frames(&Model::<f64>::new(&cfg, &store)?, &files, out, &pool)?
    } else {
        run_frames(&Model::<f32>::new(&cfg, &store)?, &files, out, &pool)?
    };
    let n = outputs.len().max(1) as f64;
    let mean_p = outputs.iter().map(|o| o.num_pillars).sum::<usize>() as f64 / n;
    let mean_d = outputs.iter().map(|o| o.detections.len()).sum::<usize>() as f64 / n;
    eprintln!("frames {} | mean pillars {mean_p:.1} | mean detections {mean_d:.1}", outputs.len());
    Ok(())
}

fn cmd_eval(labels: &Path, dets: &Path, corridor: Option<&[f64]>, out: Option<&Path>) -> Result<()> {
    let mut stems: Vec<String> = fs::read_dir(labels)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".labels.jsonl")).map(str::to_string))
        .collect();
    stems.sort();
    let mut frames = Vec::with_capacity(stems.len());
    for s in &stems {
        let gt = parse_labels(&fs::read_to_string(labels.join(format!("{s}.labels.jsonl")))?)?;
        let det_path = dets.join(format!("{s}.dets.jsonl"));
        let d = if det_path.exists() { parse_detections(&fs::read_to_string(&det_path)?)? } else { Vec::new() };
        frames.push((d, gt));
    }
    let views: Vec<_> = frames.iter().map(|(d, g)| (d.as_slice(), g.as_slice())).collect();
    let corridor = match corridor {
        Some(c) => RegionFilter::DrivingCorridor(Region { x: [c[0], c[1]], y: [c[2], c[3]] }),
        None => RegionFilter::default_corridor(),
    };
    let results = [RegionFilter::EntireArea, corridor].map(|r| evaluate_ap(&views, DEFAULT_IOU_THRESHOLDS, r));
    match out {
        Some(p) => write(p, &serde_json::to_string_pretty(&results)?)?,
        None => print_json(&results)?,
    }
    Ok(())
}

fn cmd_bench(model: &ModelArgs, p: &[usize], reps: usize, warmup: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let cfg = model.resolve()?;
    if cfg.attention.variant == AttentionVariant::None {
        bail!("config `{}` has no attention block to benchmark", cfg.name);
    }
    let acfg = AttentionConfig::from_settings(cfg.attention_channels(), &cfg.attention);
    // The block itself is single-threaded; run it on one pinned worker.
    let report = pool(Some(1))?.install(|| benchmark_attention(&acfg, p, reps, warmup, seed))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write(&dir.join("bench.json"), &serde_json::to_string_pretty(&report)?)?;
        write(&dir.join("bench.csv"), &report.to_csv())?;
    }
    print_json(&report)
}

fn cmd_analyze(model: &ModelArgs, weights: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = model.resolve()?;
    let store = load_store(&cfg, weights, seed.or(if weights.is_none() { Some(0) } else { None }))?;
    let report = weight_magnitude_stats(&store);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write(&dir.join("magnitudes.json"), &serde_json::to_string_pretty(&report)?)?;
        write(&dir.join("magnitudes.csv"), &report.to_csv())?;
    }
    print_json(&report)
}

fn cmd_selfcheck(float64: bool, seed: u64, weights: Option<&Path>, model: &ModelArgs) -> Result<bool> {
    let weights = match weights {
        Some(dir) => Some((model.resolve()?, dir.to_path_buf())),
        None => None,
    };
    let report = run_selfcheck(&SelfCheckOptions { float64, seed, weights });
    print_json(&report)?;
    if !report.passed() {
        eprintln!("failing suites: {}", report.failures().join(", "));
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Gen { config, n, seed, out } => cmd_gen(config.as_deref(), *n, *seed, out)?,
        Command::Infer { model, weights, seed, float64, out, inputs } => {
            cmd_infer(model, weights.as_deref(), *seed, *float64, out, inputs, cli.jobs)?
        }
        Command::Eval { labels, dets, corridor, out } => cmd_eval(labels, dets, corridor.as_deref(), out.as_deref())?,
        Command::Params { model } => print_json(&count_params(&model.resolve()?))?,
        Command::Flops { model, tokens } => print_json(&count_flops(&model.resolve()?, *tokens))?,
        Command::Bench { model, p, reps, warmup, seed, out } => cmd_bench(model, p, *reps, *warmup, *seed, out.as_deref())?,
        Command::AnalyzeWeights { model, weights, seed, out } => {
            cmd_analyze(model, weights.as_deref(), *seed, out.as_deref())?
        }
        Command::Selfcheck { float64, seed, weights, model } => {
            if !cmd_selfcheck(*float64, *seed, weights.as_deref(), model)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_shape_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
