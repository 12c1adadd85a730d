//! The `maskrender` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use maskrender_core::config::RunConfig;
use maskrender_core::io::{
    read_checkpoint, read_scene, write_bench_runs_csv, write_bench_summary_csv, write_depth_pgm, write_lidar_csv,
    write_ppm, write_scene, DepthImage,
};
use maskrender_core::rng::{stream, tag};
use maskrender_core::scenes::{gen_suite, oracle_render_view, simulate_lidar, SceneDef};
use maskrender_core::training::bench::{sampling_benchmark, summarize};
use maskrender_core::training::gradcheck::{grad_check, GradCheckConfig};
use maskrender_core::training::pretrain::{masked_inputs, pretrain, render_view, SceneData};
use maskrender_core::Error;

#[derive(Debug, Parser)]
#[command(name = "maskrender", version, about = "Masked rendering pre-training on synthetic scenes")]
pub struct Cli {
    /// Worker threads; 1 makes every run bitwise reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scene files with oracle images, depth maps and LiDAR sweeps.
    GenScene {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value = "scenes")]
        out: PathBuf,
    },
    /// Train and write checkpoints plus metrics.
    Pretrain(Common),
    /// Render a full view from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients against finite differences.
    GradCheck {
        /// TOML grad-check configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Short runs under each sampling strategy at a matched ray budget.
    BenchSampling(Common),
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numeric(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) => Failure::Numeric(msg),
            Error::Io(_) | Error::Format(_) => Failure::Io(msg),
            _ => Failure::Validation(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

pub fn main_with(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Validation(e.to_string()))?;
    }
    match cli.command {
        Command::GenScene { seed, n, out } => cmd_gen_scene(seed, n, &out),
        Command::Pretrain(common) => cmd_pretrain(&common),
        Command::Render {
            checkpoint,
            scene,
            view,
            common,
        } => cmd_render(&checkpoint, &scene, view, &common),
        Command::GradCheck { config, seed } => cmd_grad_check(config.as_deref(), seed),
        Command::BenchSampling(common) => cmd_bench_sampling(&common),
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml_str("", std::env::vars())?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_scenes(cfg: &RunConfig) -> CliResult<Vec<SceneDef>> {
    if cfg.scene_files.is_empty() {
        Ok(gen_suite(cfg.suite.seed, cfg.suite.scenes)?)
    } else {
        Ok(cfg.scene_files.iter().map(|p| read_scene(p)).collect::<Result<_, _>>()?)
    }
}

pub fn cmd_gen_scene(seed: u64, n: usize, out: &Path) -> CliResult {
    if n == 0 {
        return Err(Failure::Validation("--n must be at least 1".into()));
    }
    let lidar_cfg = RunConfig::default().lidar;
    std::fs::create_dir_all(out)?;
    for (i, scene) in gen_suite(seed, n)?.iter().enumerate() {
        write_scene(&out.join(format!("scene_{i:03}.json")), scene)?;
        let dir = out.join(format!("scene_{i:03}"));
        std::fs::create_dir_all(&dir)?;
        let depth_max = scene.bounds.diagonal();
        for v in 0..scene.rig.view_count() {
            let view = oracle_render_view(scene, v)?;
            write_ppm(&dir.join(format!("view_{v}.ppm")), &view.rgb)?;
            let depth = DepthImage::from_depths(scene.rig.height(), scene.rig.width(), &view.depth, depth_max)?;
            write_depth_pgm(&dir.join(format!("view_{v}_depth.pgm")), &depth)?;
        }
        let sweep = simulate_lidar(scene, scene.lidar_origin, lidar_cfg.azimuth_count, lidar_cfg.elevation_rows);
        write_lidar_csv(&dir.join("lidar.csv"), &sweep)?;
    }
    println!("wrote {n} scenes to {}", out.display());
    Ok(())
}

pub fn cmd_pretrain(common: &Common) -> CliResult {
    let cfg = load_config(common)?;
    let scenes = load_scenes(&cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml()?)?;
    let report = pretrain(&cfg, &scenes, Some(&cfg.output_dir))?;
    for e in &report.evals {
        println!("eval step {:>6}  depth_l1 {:.6}  rgb_l1 {:.6}", e.step, e.depth_l1, e.rgb_l1);
    }
    println!("checkpoint: {}", cfg.output_dir.join("checkpoint.upad").display());
    Ok(())
}

pub fn cmd_render(checkpoint: &Path, scene: &Path, view: usize, common: &Common) -> CliResult {
    let cfg = load_config(common)?;
    let params = read_checkpoint(checkpoint)?;
    let scene = read_scene(scene)?;
    if scene.bounds != params.spec.bounds {
        return Err(Failure::Validation("scene bounds differ from the checkpoint volume".into()));
    }
    let data = SceneData::prepare(&scene, &cfg, &params)?;
    let (camera, lidar) = masked_inputs(
        &data,
        &cfg,
        &params,
        &mut stream(cfg.seed, &[tag::EVAL, tag::IMAGE_MASK]),
        &mut stream(cfg.seed, &[tag::EVAL, tag::POINT_MASK]),
    )?;
    let rendered = render_view(&params, &data, camera, lidar, view, cfg.rays.points_per_ray)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let rgb_path = cfg.output_dir.join(format!("render_view_{view}.ppm"));
    let depth_path = cfg.output_dir.join(format!("render_view_{view}_depth.pgm"));
    write_ppm(&rgb_path, &rendered.rgb)?;
    let depths: Vec<Option<f64>> = rendered.depth.iter().map(|&d| Some(d)).collect();
    let depth = DepthImage::from_depths(scene.rig.height(), scene.rig.width(), &depths, scene.bounds.diagonal())?;
    write_depth_pgm(&depth_path, &depth)?;
    println!("{}\n{}", rgb_path.display(), depth_path.display());
    Ok(())
}

pub fn cmd_grad_check(config: Option<&Path>, seed: Option<u64>) -> CliResult {
    let mut cfg: GradCheckConfig = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Failure::Validation(e.to_string()))?
        }
        None => GradCheckConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = grad_check(&cfg, None)?;
    for g in &report.groups {
        println!("{:<40} {:>6} scalars  max rel err {:.3e}", g.path, g.checked, g.max_rel_err);
    }
    println!(
        "checked {} scalars, max rel err {:.3e}{}",
        report.checked,
        report.max_rel_err,
        report.worst_path.as_deref().map(|p| format!(" at {p}")).unwrap_or_default()
    );
    if report.passed {
        println!("grad-check passed");
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "grad-check failed: max rel err {:.3e} exceeds {:.1e}",
            report.max_rel_err, cfg.rel_tol
        )))
    }
}

pub fn cmd_bench_sampling(common: &Common) -> CliResult {
    let cfg = load_config(common)?;
    let scenes = load_scenes(&cfg)?;
    let runs = sampling_benchmark(&cfg, &scenes)?;
    let summary = summarize(&runs);
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_bench_runs_csv(&cfg.output_dir.join("bench_runs.csv"), &runs)?;
    write_bench_summary_csv(&cfg.output_dir.join("bench_sampling.csv"), &summary)?;
    println!("{:<12} {:>14} {:>14} {:>16}", "strategy", "depth_l1", "rgb_l1", "peak_ray_bytes");
    for s in &summary {
        println!(
            "{:<12} {:>14.6} {:>14.6} {:>16}",
            s.strategy.name(),
            s.median_depth_l1,
            s.median_rgb_l1,
            s.peak_ray_buffer_bytes
        );
    }
    Ok(())
}
