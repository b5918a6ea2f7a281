//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on runtime failures (I/O, non-finite loss,
//! failed scenes), 2 on invalid arguments, configurations or inputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use log::{info, warn};

use crate::config::{CheckpointEntry, Manifest, RunConfig, RunInfo, ALLOWED_VIEWS};
use crate::error::{Error, Result};
use crate::field::{load_checkpoint, save_checkpoint, Checkpoint, FieldModel, ParamVector};
use crate::geometry::{orbit_pose, CameraPose, Vec3};
use crate::meta::{adapt, evaluate_frames, meta_train, subsample_frames, Algorithm, SceneTask};
use crate::metrics::{aggregate, EvalReport, ReportLabel, SceneRow};
use crate::render::{render_image, RenderConfig};
use crate::scenes::{
    build_dataset, camera_intrinsics, generate_category, list_scene_dirs, load_dataset, save_category, split_views, Category,
    SceneDataset, CAMERA_DISTANCE,
};
use crate::seed::derive;

#[derive(Parser, Debug)]
#[command(name = "metanerf", version, about = "Meta-learned initializations for hash-encoded radiance fields")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic category dataset.
    GenData(GenDataArgs),
    /// Meta-train an initialization over a category.
    MetaTrain(MetaTrainArgs),
    /// Adapt to each evaluation scene from few views and report PSNR/SSIM.
    AdaptEval(AdaptEvalArgs),
    /// Render one view from a checkpoint.
    Render(RenderArgs),
    /// Merge evaluation reports into a comparison table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// sphere, box, cylinder or torus.
    pub category: Category,
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u64).range(1..))]
    pub scenes: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(8..))]
    pub frames: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub size: u64,
    /// Dataset root; scenes go to `<out>/<category>/<scene_id>`.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetaTrainArgs {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub outer_iterations: Option<usize>,
    /// Overrides `paths.output_root`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AdaptEvalArgs {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Meta-trained checkpoint to start from.
    #[arg(long, conflicts_with = "init", required_unless_present = "init")]
    pub checkpoint: Option<PathBuf>,
    /// `random` starts from the seeded initialization instead.
    #[arg(long, value_parser = ["random"])]
    pub init: Option<String>,
    /// Number of input views (2, 3 or 6); overrides `eval.n_views`.
    #[arg(long)]
    pub views: Option<usize>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file (default: `<output_root>/report_<arm>_v<views>.csv`); the
    /// resolved config is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene directory supplying intrinsics (and poses for `--frame`).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Pose of a dataset frame.
    #[arg(long)]
    pub frame: Option<usize>,
    /// Orbit pose: azimuth in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub azimuth: Option<f64>,
    /// Orbit pose: elevation in degrees.
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub elevation: f64,
    /// Orbit pose: eye-to-origin distance.
    #[arg(long, default_value_t = CAMERA_DISTANCE)]
    pub radius: f64,
    /// Explicit 4x4 row-major camera-to-world matrix, 16 numbers separated
    /// by commas or spaces.
    #[arg(long, allow_hyphen_values = true)]
    pub matrix: Option<String>,
    /// Image size when no scene is given.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Write `(outer_iteration, mean PSNR)` series here.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::InvalidConfig(_)
        | Error::ModelTooLarge { .. }
        | Error::TooManySteps { .. }
        | Error::TooFewFrames { .. }
        | Error::Report { .. }
        | Error::DegenerateDirection(_) => 2,
        _ => 1,
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if !e.to_string().contains("Usage:") {
                let mut cmd = Cli::command();
                cmd.build();
                let sub = args.iter().skip(1).find_map(|a| a.to_str().and_then(|a| cmd.find_subcommand(a)).map(|s| s.get_name().to_string()));
                let usage = match sub {
                    Some(name) => cmd.find_subcommand_mut(&name).expect("known subcommand").render_usage(),
                    None => cmd.render_usage(),
                };
                eprintln!("\n{usage}");
            }
            return 2;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n as usize);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::MetaTrain(a) => cmd_meta_train(&a),
        Command::AdaptEval(a) => cmd_adapt_eval(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<i32> {
    let size = a.size as usize;
    let intr = camera_intrinsics(size)?;
    let scenes = generate_category(a.category, a.scenes as usize, a.seed);
    let mut datasets = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let d = build_dataset(scene, a.frames as usize, &intr, [1.0; 3], derive(a.seed, &[i as u64]))?;
        datasets.push(d);
    }
    let dir = save_category(&a.out, a.category, &datasets)?;
    println!("{}/", dir.display());
    for d in &datasets {
        println!("  {}/meta.json", d.scene_id);
        println!("  {}/frames/frame_0000.ppm .. frame_{:04}.ppm", d.scene_id, d.frames.len() - 1);
    }
    println!("{} scenes x {} frames at {size}x{size}", datasets.len(), a.frames);
    Ok(0)
}

fn load_scenes(dirs: &[PathBuf]) -> Result<Vec<SceneDataset>> {
    dirs.iter().map(|d| load_dataset(d)).collect()
}

/// Splits the category into meta-training and evaluation scene
/// directories.
fn scene_partition(cfg: &RunConfig) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
    let mut dirs = list_scene_dirs(&cfg.category_dir())?;
    let test = dirs.split_off(cfg.data.train_scenes.min(dirs.len()));
    Ok((dirs, test))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.resolved.toml"), cfg.to_toml())
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("meta_iter_{iteration}.ckpt")
}

pub fn cmd_meta_train(a: &MetaTrainArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(alg) = a.algorithm {
        cfg.outer.algorithm = alg;
    }
    if let Some(n) = a.outer_iterations {
        cfg.outer.outer_iterations = n;
    }
    if let Some(o) = &a.out {
        cfg.paths.output_root = o.clone();
    }
    cfg.validate()?;
    let model = cfg.model()?;
    let out = cfg.paths.output_root.clone();
    echo_config(&cfg, &out)?;

    let (train_dirs, _) = scene_partition(&cfg)?;
    let datasets = load_scenes(&train_dirs)?;
    let tasks = datasets
        .iter()
        .map(|d| {
            let n = d.frames.len();
            let m = cfg.data.views_per_scene.min(n);
            let views = (0..m).map(|i| i * n / m).collect();
            SceneTask::new(&model, &cfg.render, d, views).map_err(|e| e.in_scene(&d.scene_id))
        })
        .collect::<Result<Vec<_>>>()?;
    info!(
        "meta-training {} over {} {} scenes, {} parameters",
        cfg.outer.algorithm.name(),
        tasks.len(),
        cfg.data.category,
        model.param_count()
    );

    let mut manifest = Manifest {
        run: RunInfo {
            command: "meta-train".into(),
            seed: cfg.seed,
            param_count: model.param_count(),
            train_scenes: datasets.iter().map(|d| d.scene_id.clone()).collect(),
            notes: Vec::new(),
        },
        config: cfg.clone(),
        checkpoints: Vec::new(),
        iterations: Vec::new(),
    };
    let manifest_path = out.join("manifest.toml");
    let start = Instant::now();
    let mut checkpoints = Vec::new();
    let result = meta_train(
        &tasks,
        model.init_params(cfg.seed),
        &cfg.outer,
        &cfg.meta_inner,
        cfg.seed,
        |i, theta| {
            let file = checkpoint_name(i);
            save_checkpoint(
                &out.join(&file),
                &Checkpoint {
                    grid: cfg.grid,
                    mlp: cfg.mlp,
                    params: theta.clone(),
                },
            )?;
            info!("wrote {file}");
            checkpoints.push(CheckpointEntry { iteration: i, file });
            Ok(())
        },
        |log| {
            info!(
                "outer {:>4}: mean inner loss {:.6} -> {:.6} ({:.1}s)",
                log.iteration,
                log.mean_initial_loss,
                log.mean_final_loss,
                start.elapsed().as_secs_f64()
            )
        },
    );
    match result {
        Ok(r) => {
            manifest.checkpoints = checkpoints;
            manifest.iterations = r.log;
            manifest.save(&manifest_path)?;
            Ok(0)
        }
        Err(e) => {
            manifest.checkpoints = checkpoints;
            manifest.run.notes.push(format!("failed: {e}"));
            manifest.save(&manifest_path)?;
            Err(e)
        }
    }
}

/// Outer iteration encoded in a `meta_iter_{i}.ckpt` file name.
fn iteration_of(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("meta_iter_")?.strip_suffix(".ckpt")?.parse().ok()
}

fn load_matching_checkpoint(path: &Path, model: &FieldModel) -> Result<ParamVector> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.grid != *model.grid_config() || ckpt.mlp != *model.mlp_config() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint {} was trained with a different architecture than the config describes",
            path.display()
        )));
    }
    Ok(ckpt.params)
}

const ADAPT_SALT: u64 = 0xADA7;

pub fn cmd_adapt_eval(a: &AdaptEvalArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(v) = a.views {
        cfg.eval.n_views = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if !ALLOWED_VIEWS.contains(&cfg.eval.n_views) {
        return Err(Error::InvalidConfig(format!("--views must be 2, 3 or 6, got {}", cfg.eval.n_views)));
    }
    cfg.validate()?;
    let model = cfg.model()?;
    let (theta, label) = match &a.checkpoint {
        Some(path) => (
            load_matching_checkpoint(path, &model)?,
            ReportLabel {
                arm: "meta".into(),
                algorithm: Some(cfg.outer.algorithm.name().into()),
                outer_iteration: iteration_of(path),
                checkpoint: path.file_name().map(|n| n.to_string_lossy().into_owned()),
            },
        ),
        None => (
            model.init_params(cfg.seed),
            ReportLabel {
                arm: "random".into(),
                ..ReportLabel::default()
            },
        ),
    };
    let (_, test_dirs) = scene_partition(&cfg)?;
    if test_dirs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no evaluation scenes: {} has only the {} meta-training scenes",
            cfg.category_dir().display(),
            cfg.data.train_scenes
        )));
    }
    let n_views = cfg.eval.n_views;
    let out = match &a.out {
        Some(p) => p.clone(),
        None => cfg.paths.output_root.join(format!("report_{}_v{n_views}.csv", label.display().replace(['/', '@'], "_"))),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&out.with_extension("config.toml"), cfg.to_toml())?;
    let mut rows = Vec::with_capacity(test_dirs.len());
    let mut failures = 0;
    for (i, dir) in test_dirs.iter().enumerate() {
        let start = Instant::now();
        let outcome = (|| -> Result<(String, f64, f64)> {
            let data = split_views(load_dataset(dir)?, n_views)?;
            let scene_seed = derive(cfg.seed, &[ADAPT_SALT, i as u64]);
            let run = || -> Result<(f64, f64)> {
                let fit = adapt(&model, &cfg.render, &theta, &data, n_views, &cfg.adapt_inner, scene_seed)?;
                let frames = subsample_frames(&data.heldout_split, cfg.eval.max_heldout_frames);
                evaluate_frames(&model, &fit.theta, &data, &frames, &cfg.eval_render, &cfg.eval.ssim)
            };
            let (p, s) = run().map_err(|e| e.in_scene(&data.scene_id))?;
            Ok((data.scene_id, p, s))
        })();
        match outcome {
            Ok((scene_id, psnr, ssim)) => {
                info!("{scene_id}: PSNR {psnr:.3} dB, SSIM {ssim:.4} ({:.1}s)", start.elapsed().as_secs_f64());
                rows.push(SceneRow { scene_id, n_views, psnr, ssim });
            }
            Err(e) => {
                failures += 1;
                eprintln!("error: {e}");
                let scene_id = match &e {
                    Error::Scene { scene_id, .. } => scene_id.clone(),
                    _ => dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                };
                rows.push(SceneRow {
                    scene_id,
                    n_views,
                    psnr: f64::NAN,
                    ssim: f64::NAN,
                });
            }
        }
    }
    match aggregate(label, rows) {
        Ok(report) => {
            report.save(&out)?;
            info!(
                "{} scenes: mean PSNR {:.3} dB, mean SSIM {:.4}; report {}",
                report.summary.count,
                report.summary.psnr.mean,
                report.summary.ssim.mean,
                out.display()
            );
        }
        Err(e) => warn!("no report written: {e}"),
    }
    Ok(if failures > 0 { 1 } else { 0 })
}

fn parse_matrix(text: &str) -> Result<CameraPose> {
    let values: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidConfig(format!("--matrix: {s:?} is not a number"))))
        .collect::<Result<_>>()?;
    if values.len() != 16 {
        return Err(Error::InvalidConfig(format!("--matrix: expected 16 numbers, found {}", values.len())));
    }
    CameraPose::from_matrix(&values).map_err(|e| Error::InvalidConfig(format!("--matrix: {e}")))
}

pub fn cmd_render(a: &RenderArgs) -> Result<i32> {
    let chosen = [a.frame.is_some(), a.azimuth.is_some(), a.matrix.is_some()].iter().filter(|&&b| b).count();
    if chosen != 1 {
        return Err(Error::InvalidConfig("give exactly one of --frame, --azimuth or --matrix".into()));
    }
    if !(a.radius > 0.0 && a.radius.is_finite()) || !a.elevation.is_finite() || a.elevation.abs() >= 90.0 {
        return Err(Error::InvalidConfig("orbit pose needs a positive radius and |elevation| < 90".into()));
    }
    if a.samples == 0 || a.size == 0 {
        return Err(Error::InvalidConfig("--samples and --size must be positive".into()));
    }
    let matrix_pose = a.matrix.as_deref().map(parse_matrix).transpose()?;
    let scene = a.scene.as_deref().map(load_dataset).transpose()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = ckpt.model()?;
    let intr = match &scene {
        Some(s) => s.intrinsics,
        None => camera_intrinsics(a.size)?,
    };
    let pose = if let Some(i) = a.frame {
        let s = scene
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--frame needs --scene".into()))?;
        s.frames
            .get(i)
            .ok_or_else(|| Error::InvalidConfig(format!("--frame {i} out of range ({} frames)", s.frames.len())))?
            .pose
    } else if let Some(az) = a.azimuth {
        let el = a.elevation.to_radians();
        orbit_pose(az.to_radians(), a.radius * el.sin(), a.radius * el.cos(), Vec3::zeros())?
    } else {
        matrix_pose.expect("one pose source chosen")
    };
    let render = RenderConfig {
        samples_per_ray: a.samples,
        ..RenderConfig::default()
    };
    let img = render_image::<f32>(&model, ckpt.params.as_slice(), &pose, &intr, &render, None)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    img.write_ppm(&a.out)?;
    info!("wrote {}", a.out.display());
    Ok(0)
}

/// Fixed-width comparison table; the delta column is relative to the
/// first report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let with_delta = reports.len() > 1;
    let _ = write!(
        s,
        "{:<28} {:>5} {:>5} {:>6} {:>9} {:>8} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "arm", "iters", "views", "scenes", "psnr_mean", "psnr_std", "psnr_var", "ssim", "top25", "top50", "top75", "top100"
    );
    if with_delta {
        let _ = write!(s, " {:>8}", "delta");
    }
    s.push('\n');
    let base = reports.first().map(|r| r.summary.psnr.mean).unwrap_or(0.0);
    for r in reports {
        let q = |i: usize| r.summary.quartiles.get(i).map(|q| q.psnr_mean).unwrap_or(f64::NAN);
        let iters = r.label.outer_iteration.map(|i| i.to_string()).unwrap_or_else(|| "-".into());
        let views = r.n_views().map(|v| v.to_string()).unwrap_or_else(|| "mixed".into());
        let _ = write!(
            s,
            "{:<28} {:>5} {:>5} {:>6} {:>9.3} {:>8.3} {:>9.3} {:>8.4} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            r.label.display(),
            iters,
            views,
            r.summary.count,
            r.summary.psnr.mean,
            r.summary.psnr.std,
            r.summary.psnr.variance,
            r.summary.ssim.mean,
            q(0),
            q(1),
            q(2),
            q(3)
        );
        if with_delta {
            let _ = write!(s, " {:>+8.3}", r.summary.psnr.mean - base);
        }
        s.push('\n');
    }
    s
}

/// CSV series `arm,algorithm,n_views,outer_iteration,mean_psnr` from
/// reports that carry an outer iteration, sorted by series then iteration.
pub fn format_curve(reports: &[EvalReport]) -> String {
    let mut points: Vec<(String, String, String, usize, f64)> = reports
        .iter()
        .filter_map(|r| {
            let it = r.label.outer_iteration?;
            let views = r.n_views().map(|v| v.to_string()).unwrap_or_else(|| "mixed".into());
            Some((r.label.arm.clone(), r.label.algorithm.clone().unwrap_or_default(), views, it, r.summary.psnr.mean))
        })
        .collect();
    points.sort_by(|a, b| (&a.0, &a.1, &a.2, a.3).cmp(&(&b.0, &b.1, &b.2, b.3)));
    let mut s = String::from("arm,algorithm,n_views,outer_iteration,mean_psnr\n");
    for (arm, alg, views, it, p) in points {
        let _ = writeln!(s, "{arm},{alg},{views},{it},{p}");
    }
    s
}

pub fn cmd_report(a: &ReportArgs) -> Result<i32> {
    let reports = a.reports.iter().map(|p| EvalReport::load(p)).collect::<Result<Vec<_>>>()?;
    let table = format_table(&reports);
    print!("{table}");
    if let Some(out) = &a.out {
        write_file(out, &table)?;
    }
    if let Some(curve) = &a.curve {
        write_file(curve, format_curve(&reports))?;
    }
    Ok(0)
}
