//! Command-line trainer, renderer, evaluator and volume analyzer for
//! Gaussian-splat scenes.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::FileConfig;
use volsplat_core::camera::{scene_extent, TrainingView};
use volsplat_core::cloud::GaussianCloud;
use volsplat_core::metrics::{
    psnr_capped, ssim, volume_histogram, write_training_metrics_csv, write_view_metrics_csv,
    HistogramSpec, SsimParams, ViewMetrics,
};
use volsplat_core::render::{render, RenderOptions};
use volsplat_core::scene::colmap::find_sparse_dir;
use volsplat_core::scene::{
    export_checkpoint, import_checkpoint, load_colmap_sparse, load_images, load_ply_points,
    normalize_scene, seed_cloud, SeedConfig, SparsePoint, ViewRecord,
};
use volsplat_core::train::{
    train, AdcConfig, GradSignalMode, LearningRates, OptimState, SplitOpacity, TrainOptions,
};

// Exit codes: 0 success, 1 configuration error, 2 i/o error.
const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;

struct AppError {
    code: u8,
    message: String,
}

type AppResult<T> = Result<T, AppError>;

impl AppError {
    fn config(message: impl ToString) -> Self {
        AppError {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn io(message: impl ToString) -> Self {
        AppError {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }
}

impl From<volsplat_core::Error> for AppError {
    fn from(e: volsplat_core::Error) -> Self {
        use volsplat_core::Error::*;
        let code = match &e {
            Io { .. } | Image { .. } | Parse { .. } => EXIT_IO,
            InvalidParameter(_)
            | SingularMatrix(_)
            | DimensionMismatch(_)
            | UnsupportedCameraModel(_) => EXIT_CONFIG,
        };
        AppError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "volsplat",
    about = "CPU Gaussian-splatting trainer with volume-driven densification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitSource {
    Colmap,
    Ply,
}

#[derive(Subcommand)]
enum Command {
    /// Train a Gaussian cloud on a posed image set.
    Train(TrainArgs),
    /// Render a checkpoint from a scene's cameras, one PNG per view.
    Render(RenderArgs),
    /// PSNR/SSIM of a checkpoint over a held-out split.
    Eval(EvalArgs),
    /// Volume distribution of a checkpoint.
    AnalyzeVolumes(AnalyzeArgs),
}

#[derive(Parser)]
struct TrainArgs {
    /// Scene directory (COLMAP layout: sparse model + images).
    #[arg(long)]
    scene: PathBuf,
    /// Where the initial point cloud comes from.
    #[arg(long, value_enum, default_value = "colmap")]
    init: InitSource,
    /// PLY point cloud used when --init ply (default `<scene>/points.ply`).
    #[arg(long)]
    ply: Option<PathBuf>,
    /// Image directory (default `<scene>/images`, falling back to `<scene>`).
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32))]
    downsample: Option<u32>,
    #[arg(long)]
    iters: Option<u64>,
    /// Volume threshold for the volumetric split.
    #[arg(long)]
    vth: Option<f64>,
    #[arg(long)]
    max_gaussians: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded, bit-reproducible runs.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Optional TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sh_degree: Option<usize>,
    /// Rescale the scene so the camera bounding-box diagonal is 1.
    #[arg(long)]
    normalize_scene: bool,
    /// Hold out every Nth view for the metrics log (0 trains on all views).
    #[arg(long)]
    holdout_every: Option<usize>,
    /// Disable the volumetric densification (baseline density control only).
    #[arg(long)]
    no_volumetric: bool,
}

#[derive(Parser)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene directory providing the cameras.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 1)]
    downsample: u32,
    #[arg(long, default_value = "renders")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Parser)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    downsample: u32,
    /// Every Nth view forms the evaluation split.
    #[arg(long, default_value_t = 8)]
    eval_mod: usize,
    /// Output CSV path.
    #[arg(long, default_value = "eval.csv")]
    out: PathBuf,
}

#[derive(Parser)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reference volume threshold.
    #[arg(long, default_value_t = 0.03)]
    vth: f64,
    /// Histogram CSV path.
    #[arg(long, default_value = "volumes.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args),
        Command::AnalyzeVolumes(args) => cmd_analyze_volumes(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Loads the sparse model and image records of a scene directory.
fn load_scene_records(scene: &Path) -> AppResult<(Vec<SparsePoint>, Vec<ViewRecord>)> {
    if !scene.is_dir() {
        return Err(AppError::config(format!(
            "scene directory {} does not exist",
            scene.display()
        )));
    }
    let sparse = find_sparse_dir(scene).ok_or_else(|| {
        AppError::config(format!(
            "no COLMAP sparse model under {} (looked for cameras.bin/cameras.txt)",
            scene.display()
        ))
    })?;
    Ok(load_colmap_sparse(&sparse)?)
}

fn images_dir(scene: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    if let Some(dir) = explicit {
        return dir.clone();
    }
    let conventional = scene.join("images");
    if conventional.is_dir() {
        conventional
    } else {
        scene.to_path_buf()
    }
}

fn ensure_out_dir(dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::io(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_train(args: TrainArgs) -> AppResult<()> {
    let file_cfg = match &args.config {
        Some(path) => FileConfig::load(path).map_err(AppError::config)?,
        None => FileConfig::default(),
    };

    let (mut points, mut records) = load_scene_records(&args.scene)?;
    if args.init == InitSource::Ply {
        let ply_path = args
            .ply
            .clone()
            .unwrap_or_else(|| args.scene.join("points.ply"));
        if !ply_path.is_file() {
            return Err(AppError::config(format!(
                "point cloud {} does not exist",
                ply_path.display()
            )));
        }
        points = load_ply_points(&ply_path)?;
    }
    if records.is_empty() {
        return Err(AppError::config("scene has no registered images"));
    }

    if args.normalize_scene || file_cfg.normalize_scene.unwrap_or(false) {
        let scale = normalize_scene(&mut points, &mut records);
        println!("normalized scene by factor {scale:.6}");
    }

    let downsample = args.downsample.or(file_cfg.downsample).unwrap_or(1);
    let dir = images_dir(&args.scene, &args.images);
    let views = load_images(&records, &dir, downsample)?;

    let holdout = args.holdout_every.or(file_cfg.holdout_every).unwrap_or(0);
    let (train_views, eval_views): (Vec<TrainingView>, Vec<TrainingView>) = if holdout > 0 {
        let mut t = Vec::new();
        let mut e = Vec::new();
        for (i, v) in views.into_iter().enumerate() {
            if i % holdout == 0 {
                e.push(v);
            } else {
                t.push(v);
            }
        }
        (t, e)
    } else {
        (views, Vec::new())
    };
    if train_views.is_empty() {
        return Err(AppError::config("holdout split left no training views"));
    }

    let extent = scene_extent(&train_views);
    let sh_degree = args.sh_degree.or(file_cfg.sh_degree).unwrap_or(3);
    if sh_degree > 3 {
        return Err(AppError::config(format!("sh_degree {sh_degree} exceeds 3")));
    }
    let mut cloud = seed_cloud(&points, &SeedConfig::new(sh_degree, extent))?;
    let mut optim = OptimState::new(&cloud, LearningRates::for_scene_extent(extent));

    let opts = build_train_options(&args, &file_cfg, extent)?;
    println!(
        "training {} Gaussians from {} views (extent {:.3}, threads {}, seed {})",
        cloud.len(),
        train_views.len(),
        extent,
        if opts.deterministic { 1 } else { opts.threads },
        opts.seed
    );

    let report = train(
        &mut cloud,
        &mut optim,
        &train_views,
        &eval_views,
        &opts,
        &mut |r| {
            let psnr = r.psnr.map(|p| format!(" psnr {p:.2}")).unwrap_or_default();
            println!(
                "iter {:>6} loss {:.6} N {}{} ({:.1}s)",
                r.iteration, r.loss, r.num_gaussians, psnr, r.wall_time_s
            );
        },
    )?;

    ensure_out_dir(&args.out)?;
    export_checkpoint(&cloud, &args.out.join("checkpoint.ply"))?;
    write_training_metrics_csv(&report.metrics, &args.out.join("metrics.csv"))?;
    for h in &report.histograms {
        h.write_csv(&args.out.join(format!("histogram_{:06}.csv", h.iteration)))?;
    }
    println!(
        "done: {} Gaussians, final loss {:.6}, outputs in {}",
        cloud.len(),
        report.final_loss,
        args.out.display()
    );
    Ok(())
}

fn build_train_options(args: &TrainArgs, cfg: &FileConfig, extent: f64) -> AppResult<TrainOptions> {
    let mut adc = AdcConfig::for_scene_extent(extent);
    if let Some(v) = cfg.densify_interval {
        adc.densify_interval = v;
    }
    if let Some(v) = cfg.densify_start {
        adc.densify_start = v;
    }
    if let Some(v) = cfg.densify_stop {
        adc.densify_stop = v;
    }
    if let Some(v) = cfg.grad_threshold {
        adc.grad_threshold = v;
    }
    if let Some(v) = cfg.clone_vs_split_scale {
        adc.clone_vs_split_scale = v;
    }
    if let Some(v) = cfg.volume_threshold {
        adc.volume_threshold = v;
    }
    if let Some(v) = cfg.prune_opacity {
        adc.prune_opacity = v;
    }
    if let Some(v) = cfg.opacity_reset_interval {
        adc.opacity_reset_interval = v;
    }
    if let Some(v) = cfg.max_gaussians {
        adc.max_gaussians = v;
    }
    if let Some(v) = cfg.enable_volumetric {
        adc.enable_volumetric = v;
    }
    if let Some(v) = cfg.volumetric_after_stop {
        adc.volumetric_after_stop = v;
    }
    if let Some(v) = &cfg.grad_signal {
        adc.grad_signal = match v.as_str() {
            "mean" => GradSignalMode::Mean,
            "sum" => GradSignalMode::Sum,
            other => {
                return Err(AppError::config(format!(
                    "grad_signal must be mean|sum, got {other}"
                )))
            }
        };
    }
    if let Some(v) = &cfg.split_opacity {
        adc.split_opacity = match v.as_str() {
            "inherit" => SplitOpacity::Inherit,
            "halved" => SplitOpacity::Halved,
            other => {
                return Err(AppError::config(format!(
                    "split_opacity must be inherit|halved, got {other}"
                )))
            }
        };
    }
    // Flags take precedence over the file.
    if let Some(v) = args.vth {
        adc.volume_threshold = v;
    }
    if let Some(v) = args.max_gaussians {
        adc.max_gaussians = v;
    }
    if args.no_volumetric {
        adc.enable_volumetric = false;
    }

    let mut loss = volsplat_core::autograd::LossConfig::default();
    if let Some(v) = cfg.lambda_ssim {
        loss.lambda_ssim = v;
    }
    if let Some(v) = cfg.ssim_window {
        loss.ssim.window = v;
    }
    if let Some(v) = cfg.ssim_sigma {
        loss.ssim.sigma = v;
    }

    let mut render = RenderOptions::default();
    if let Some(bg) = cfg.background {
        render.background = bg;
    }

    let opts = TrainOptions {
        iterations: args.iters.or(cfg.iterations).unwrap_or(7000),
        adc,
        loss,
        lrs: LearningRates::for_scene_extent(extent),
        render,
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        eval_interval: cfg.eval_interval.unwrap_or(500),
        histogram_iterations: cfg
            .histogram_iterations
            .clone()
            .unwrap_or_else(|| vec![4000, 8000, 12000]),
        histogram_spec: HistogramSpec::default(),
        threads: args.threads.or(cfg.threads).unwrap_or(0),
        deterministic: args.deterministic || cfg.deterministic.unwrap_or(false),
    };
    adc_sanity(&opts)?;
    Ok(opts)
}

fn adc_sanity(opts: &TrainOptions) -> AppResult<()> {
    opts.adc.validate()?;
    opts.loss.validate()?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> AppResult<GaussianCloud> {
    if !path.is_file() {
        return Err(AppError::config(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(import_checkpoint(path)?)
}

fn cmd_render(args: RenderArgs) -> AppResult<()> {
    let cloud = load_checkpoint(&args.checkpoint)?;
    let (_, records) = load_scene_records(&args.scene)?;
    ensure_out_dir(&args.out)?;
    if ![1, 2, 4].contains(&args.downsample) {
        return Err(AppError::config("downsample must be 1, 2 or 4"));
    }
    let pool = rayon_pool(args.threads)?;
    for record in &records {
        let intrinsics = record.intrinsics.downsampled(args.downsample);
        let out =
            pool.install(|| render(&cloud, &intrinsics, &record.pose, &RenderOptions::default()));
        let stem = Path::new(&record.image_name)
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| record.image_name.clone());
        let path = args.out.join(format!("{stem}.png"));
        out.frame.to_image().save_png(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn rayon_pool(threads: usize) -> AppResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AppError::config(format!("cannot build thread pool: {e}")))
}

fn cmd_eval(args: EvalArgs) -> AppResult<()> {
    let cloud = load_checkpoint(&args.checkpoint)?;
    let (_, records) = load_scene_records(&args.scene)?;
    if args.eval_mod == 0 {
        return Err(AppError::config("eval_mod must be positive"));
    }
    let dir = images_dir(&args.scene, &args.images);
    let views = load_images(&records, &dir, args.downsample)?;
    let eval_views: Vec<&TrainingView> = views
        .iter()
        .enumerate()
        .filter(|(i, _)| i % args.eval_mod == 0)
        .map(|(_, v)| v)
        .collect();
    if eval_views.is_empty() {
        return Err(AppError::config("evaluation split is empty"));
    }

    let opts = RenderOptions::default();
    let ssim_params = SsimParams::default();
    let mut rows = Vec::new();
    for view in eval_views {
        let out = render(&cloud, &view.intrinsics, &view.pose, &opts);
        let rendered = out.frame.to_image();
        let name = view
            .source_path
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        rows.push(ViewMetrics {
            view: name,
            psnr: psnr_capped(&rendered, &view.image)?,
            ssim: ssim(&rendered, &view.image, &ssim_params)?,
        });
    }
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
    write_view_metrics_csv(&rows, &args.out)?;
    println!(
        "evaluated {} views: mean psnr {:.3} dB, mean ssim {:.4} ({})",
        rows.len(),
        mean_psnr,
        mean_ssim,
        args.out.display()
    );
    Ok(())
}

fn cmd_analyze_volumes(args: AnalyzeArgs) -> AppResult<()> {
    let cloud = load_checkpoint(&args.checkpoint)?;
    let histogram = volume_histogram(&cloud, &HistogramSpec::default(), args.vth, 0);
    histogram.write_csv(&args.out)?;
    println!(
        "{} Gaussians; {:.4}% of volumes at or below {:.4} (histogram: {})",
        histogram.total,
        histogram.fraction_below_threshold * 100.0,
        args.vth,
        args.out.display()
    );
    Ok(())
}
