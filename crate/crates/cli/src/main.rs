use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use photonfield::experiment::{self, Backend, CompareReport, ExperimentConfig};
use photonfield::field::{load_checkpoint, save_checkpoint};
use photonfield::photon::{read_photons, write_photons};
use photonfield::trainer::write_training_log;
use photonfield::volume::synth::Synthetic;
use photonfield::volume::write_volume;
use photonfield::{read_image, write_image, PhotonMap};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "photonfield",
    version,
    about = "Neural photon fields for volume rendering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps the worker thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Slab,
    Sphere,
    Vortices,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural volume.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Generator; defaults to the config's synthetic volume.
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        /// Voxels per axis; defaults to the config's dims.
        #[arg(long)]
        dims: Option<usize>,
    },
    /// Trace the multi-phase photon map.
    Trace {
        #[command(flatten)]
        common: Common,
    },
    /// Train a field on the traced map.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Render every backend listed in the config.
    Render {
        #[command(flatten)]
        common: Common,
    },
    /// Compare two images written by `render` (the second is the reference).
    Compare {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
    },
    /// Time tracing, training and every render backend.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn setup(common: &Common) -> Result<ExperimentConfig> {
    if let Some(n) = common.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn photons_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("photons.bin")
}

fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("field.ckpt")
}

fn load_map(cfg: &ExperimentConfig) -> Result<PhotonMap> {
    let path = photons_path(cfg);
    let (photons, phases) = read_photons(&path).context("run `photonfield trace` first")?;
    Ok(PhotonMap::build(photons, phases))
}

fn synth(common: Common, kind: Option<Kind>, dims: Option<usize>) -> Result<()> {
    let cfg = setup(&common)?;
    let generator = match kind {
        None => cfg.scene.synthetic,
        Some(Kind::Slab) => Synthetic::default_slab(),
        Some(Kind::Sphere) => Synthetic::default_sphere(),
        Some(Kind::Vortices) => Synthetic::Vortices {
            seed: cfg.seed,
            octaves: 4,
        },
    };
    let dims = dims.map_or(cfg.scene.dims, |n| [n; 3]);
    let grid = generator.generate(dims)?;
    let path = cfg.out_dir.join("volume.raw");
    write_volume(&grid, &path)?;
    println!(
        "wrote {} ({}x{}x{})",
        path.display(),
        dims[0],
        dims[1],
        dims[2]
    );
    Ok(())
}

#[derive(Serialize)]
struct TraceReport {
    seed: u64,
    photons: usize,
    phases: Vec<f64>,
    emitted: Vec<Vec<usize>>,
}

fn trace(common: Common) -> Result<()> {
    let cfg = setup(&common)?;
    let scene = cfg.scene()?;
    let trace = experiment::run_trace(&cfg, &scene)?;
    write_photons(&photons_path(&cfg), &trace.photons, &trace.phase_set)?;
    let report = TraceReport {
        seed: cfg.seed,
        photons: trace.photons.len(),
        phases: trace.phase_set.values().to_vec(),
        emitted: trace.emitted.clone(),
    };
    write_json(&cfg.out_dir.join("trace.json"), &report)?;
    println!("{:<10} {:>10}", "phase g", "emitted");
    for (i, g) in report.phases.iter().enumerate() {
        let n: usize = report.emitted.iter().map(|per_light| per_light[i]).sum();
        println!("{g:<10} {n:>10}");
    }
    println!("stored photons: {}", report.photons);
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    steps: usize,
    final_loss: f64,
    knn_seconds: f64,
    knn_cpu_seconds: f64,
    optimizer_seconds: f64,
}

fn train(common: Common) -> Result<()> {
    let cfg = setup(&common)?;
    let map = load_map(&cfg)?;
    let (field, adam, report) = experiment::run_train(&cfg, &map)?;
    save_checkpoint(&checkpoint_path(&cfg), &field, &adam)?;
    write_training_log(&cfg.out_dir.join("train_log.csv"), &report.records)?;
    let summary = TrainSummary {
        seed: cfg.seed,
        steps: report.records.len(),
        final_loss: report.final_loss(0.05),
        knn_seconds: report.knn_wall.as_secs_f64(),
        knn_cpu_seconds: report.knn_cpu.as_secs_f64(),
        optimizer_seconds: report.step_wall.as_secs_f64(),
    };
    write_json(&cfg.out_dir.join("train.json"), &summary)?;
    println!("steps       {}", summary.steps);
    println!("final loss  {:.6e}", summary.final_loss);
    println!("knn time    {:.2} s", summary.knn_seconds);
    println!("optimizer   {:.2} s", summary.optimizer_seconds);
    Ok(())
}

#[derive(Serialize)]
struct RenderEntry {
    backend: Backend,
    image: PathBuf,
    seconds: f64,
    mean_luminance: f64,
}

fn render(common: Common) -> Result<()> {
    let cfg = setup(&common)?;
    let scene = cfg.scene()?;
    let needs = |b| cfg.render.backends.contains(&b);
    let field = if needs(Backend::Neural) {
        Some(
            load_checkpoint(&checkpoint_path(&cfg))
                .context("run `photonfield train` first")?
                .0,
        )
    } else {
        None
    };
    let map = if needs(Backend::PhotonMap) {
        Some(load_map(&cfg)?)
    } else {
        None
    };
    let mut entries = Vec::new();
    for &backend in &cfg.render.backends {
        let fb = experiment::run_render(&cfg, &scene, backend, field.as_ref(), map.as_ref())?;
        let img = fb.to_image();
        let path = cfg.out_dir.join(format!(
            "{}.{}",
            backend.name(),
            cfg.render.format.extension()
        ));
        write_image(&img, &path, cfg.render.format, cfg.render.gamma)?;
        entries.push(RenderEntry {
            backend,
            image: path,
            seconds: fb.stats.wall.as_secs_f64(),
            mean_luminance: img.mean_luminance(),
        });
    }
    write_json(&cfg.out_dir.join("render.json"), &entries)?;
    println!("{:<12} {:>10} {:>14}", "backend", "seconds", "mean lum");
    for e in &entries {
        println!(
            "{:<12} {:>10.3} {:>14.6}",
            e.backend.name(),
            e.seconds,
            e.mean_luminance
        );
    }
    Ok(())
}

fn compare(common: Common, a: PathBuf, b: PathBuf) -> Result<()> {
    let cfg = setup(&common)?;
    let ia = read_image(&a).with_context(|| format!("reading {}", a.display()))?;
    let ib = read_image(&b).with_context(|| format!("reading {}", b.display()))?;
    let report: CompareReport = experiment::compare(&ia, &ib)?;
    write_json(&cfg.out_dir.join("compare.json"), &report)?;
    println!("mse       {:.6e}", report.mse);
    println!("mean rse  {:.6e}", report.mean_rse);
    println!("ssim      {:.6}", report.ssim);
    Ok(())
}

fn bench(common: Common) -> Result<()> {
    let cfg = setup(&common)?;
    let report = experiment::run_bench(&cfg)?;
    write_json(&cfg.out_dir.join("bench.json"), &report)?;
    println!("photons         {}", report.photons);
    println!("trace           {:.3} s", report.trace_seconds);
    println!("map build       {:.3} s", report.build_seconds);
    println!("train knn       {:.3} s", report.knn_seconds);
    println!("train optimizer {:.3} s", report.optimizer_seconds);
    println!("final loss      {:.6e}", report.final_loss);
    println!("{:<12} {:>10} {:>12}", "backend", "seconds", "indirect s");
    for r in &report.render {
        println!(
            "{:<12} {:>10.3} {:>12.3}",
            r.backend.name(),
            r.seconds,
            r.indirect_seconds
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { common, kind, dims } => synth(common, kind, dims),
        Command::Trace { common } => trace(common),
        Command::Train { common } => train(common),
        Command::Render { common } => render(common),
        Command::Compare { common, a, b } => compare(common, a, b),
        Command::Bench { common } => bench(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
