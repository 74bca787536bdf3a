//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camgeo::{CameraModel, EulerAngles};
use crate::depthmetrics::{evaluate, MetricReport, DEFAULT_CAP};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, DEFAULT_INSTANCES};
use crate::groundprior::{ground_depth, normalize_prior, DEFAULT_MAX_DEPTH};
use crate::io;
use crate::losses::LossWeights;
use crate::rotaug::{augment_ground, augment_sparse_depth, rotate_depth, rotate_image, sample_angles};
use crate::scalelab::{ablation, recover_scale, OptimConfig, OptimOutcome, RecoveryReport, SceneSpec};

#[derive(Debug, Parser)]
#[command(name = "planedepth", about = "Ground-prior metric depth toolkit", version)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the ground-plane depth of a camera as PFM.
    GroundPrior {
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the prior divided by --max-depth and clamped to [0, 1].
        #[arg(long)]
        normalized_out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: f64,
    },
    /// Print the attention target for a pathway width.
    Tau {
        #[arg(long)]
        pathway_width: f64,
        #[arg(long)]
        camera: PathBuf,
    },
    /// Rotate an image, a depth map or sparse depth about the optical center.
    Augment(AugmentArgs),
    /// Render a scene and write its views and ground truth.
    Synth {
        /// Scene JSON; the reference scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Optimize depth, attention and pose scale with the full objective.
    RecoverScale(LabArgs),
    /// The same without the ground constraint and the attention regularizer.
    Ablate(LabArgs),
    /// Depth metrics of a prediction against ground truth, as JSON.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_INSTANCES)]
        instances: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    camera: PathBuf,
    /// Degrees; all three angles are drawn from --seed when none is given.
    #[arg(long, allow_hyphen_values = true)]
    pitch: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    roll: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    yaw: Option<f64>,
    /// Allow angles beyond the augmentation limits.
    #[arg(long)]
    force: bool,
    /// PPM image to rotate, written to --image-out.
    #[arg(long, requires = "image_out")]
    image: Option<PathBuf>,
    #[arg(long)]
    image_out: Option<PathBuf>,
    /// Dense PFM depth to rotate, written to --depth-out.
    #[arg(long, requires = "depth_out")]
    depth: Option<PathBuf>,
    #[arg(long)]
    depth_out: Option<PathBuf>,
    /// Sparse PFM depth to reproject, written to --sparse-out.
    #[arg(long, requires = "sparse_out")]
    sparse: Option<PathBuf>,
    #[arg(long)]
    sparse_out: Option<PathBuf>,
    /// Ground prior of the rotated camera.
    #[arg(long)]
    prior_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LabArgs {
    /// Scene JSON; the reference scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Optimizer settings JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial pose scale; depth starts at this multiple of the truth.
    #[arg(long, default_value_t = 2.0)]
    k0: f64,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda_smooth: Option<f64>,
    #[arg(long)]
    lambda_const: Option<f64>,
    #[arg(long)]
    lambda_reg: Option<f64>,
    /// Attention target; derived from the scene's pathway width when omitted.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    report: PathBuf,
    /// Fused depth as PFM.
    #[arg(long)]
    depth_out: Option<PathBuf>,
    /// Attention as PFM.
    #[arg(long)]
    attention_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetricsOutput {
    seed: u64,
    cap: f64,
    metrics: MetricReport,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 for usage and validation errors, 2 for
/// numerical failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let seed = cli.seed;
    pool.install(|| dispatch(cli.command, seed))
}

fn dispatch(command: Command, seed: u64) -> Result<i32> {
    match command {
        Command::GroundPrior {
            camera,
            out,
            normalized_out,
            max_depth,
        } => {
            ensure_input(&camera)?;
            ensure_output(&out)?;
            if let Some(p) = &normalized_out {
                ensure_output(p)?;
            }
            let cam: CameraModel = io::read_json(&camera)?;
            let prior = ground_depth(&cam);
            let normalized = normalized_out.as_ref().map(|_| normalize_prior(&prior, max_depth)).transpose()?;
            io::write_pfm(&out, &prior.depth)?;
            if let (Some(p), Some(grid)) = (&normalized_out, &normalized) {
                io::write_pfm(p, grid)?;
            }
            let (w, h) = cam.shape();
            println!("{}x{} ground prior, {} valid pixels", w, h, prior.depth.count_valid());
        }
        Command::Tau { pathway_width, camera } => {
            ensure_input(&camera)?;
            let cam: CameraModel = io::read_json(&camera)?;
            let tau = crate::groundprior::compute_tau(
                pathway_width,
                cam.height() as f64,
                cam.width() as f64,
                cam.mount_height(),
            )?;
            println!("{tau}");
        }
        Command::Augment(args) => augment(args, seed)?,
        Command::Synth { scene, out_dir } => {
            if !out_dir.is_dir() {
                return Err(Error::Config(format!("output directory {} does not exist", out_dir.display())));
            }
            let spec = load_scene(scene.as_deref())?;
            let (target, sources) = spec.render_all()?;
            let prior = ground_depth(&spec.camera);
            io::write_json(&out_dir.join("scene.json"), &spec)?;
            io::write_ppm(&out_dir.join("target.ppm"), &target.image)?;
            io::write_pfm(&out_dir.join("target_depth.pfm"), &target.depth)?;
            io::write_pfm(&out_dir.join("ground_prior.pfm"), &prior.depth)?;
            for (i, s) in sources.iter().enumerate() {
                io::write_ppm(&out_dir.join(format!("source_{i}.ppm")), &s.image)?;
            }
            let ground = target.ground.iter().filter(|&&g| g).count();
            println!(
                "rendered target and {} sources; {} of {} pixels see the ground",
                sources.len(),
                ground,
                target.ground.len()
            );
        }
        Command::RecoverScale(args) => lab(args, seed, false)?,
        Command::Ablate(args) => lab(args, seed, true)?,
        Command::Metrics { pred, gt, cap, out } => {
            ensure_input(&pred)?;
            ensure_input(&gt)?;
            if let Some(p) = &out {
                ensure_output(p)?;
            }
            let metrics = evaluate(&io::read_pfm(&pred)?, &io::read_pfm(&gt)?, cap)?;
            let json = io::to_json(&MetricsOutput { seed, cap, metrics })?;
            match out {
                Some(p) => io::write_atomic(&p, json.as_bytes())?,
                None => print!("{json}"),
            }
        }
        Command::Gradcheck { instances, report } => {
            if let Some(p) = &report {
                ensure_output(p)?;
            }
            let r = run_gradcheck(seed, instances)?;
            for s in &r.suites {
                println!(
                    "{:<7} {} instances, {} coordinates ({} excluded), max relative error {:.3e}: {}",
                    s.name,
                    s.instances,
                    s.checked_coordinates,
                    s.excluded_coordinates,
                    s.max_relative_error,
                    if s.passed { "PASS" } else { "FAIL" }
                );
            }
            if let Some(p) = &report {
                io::write_json(p, &r)?;
            }
            if !r.passed {
                return Ok(2);
            }
        }
    }
    Ok(0)
}

fn augment(args: AugmentArgs, seed: u64) -> Result<()> {
    ensure_input(&args.camera)?;
    for p in [&args.image, &args.depth, &args.sparse].into_iter().flatten() {
        ensure_input(p)?;
    }
    for p in [&args.image_out, &args.depth_out, &args.sparse_out, &args.prior_out].into_iter().flatten() {
        ensure_output(p)?;
    }
    let cam: CameraModel = io::read_json(&args.camera)?;
    let angles = match (args.pitch, args.roll, args.yaw) {
        (None, None, None) => sample_angles(&mut ChaCha8Rng::seed_from_u64(seed)),
        (p, r, y) => EulerAngles::new(p.unwrap_or(0.0), r.unwrap_or(0.0), y.unwrap_or(0.0)),
    };
    if !args.force {
        angles.check_limits()?;
    }

    let image = args.image.as_deref().map(io::read_ppm).transpose()?;
    let depth = args.depth.as_deref().map(io::read_pfm).transpose()?;
    let sparse = args.sparse.as_deref().map(io::read_pfm).transpose()?;
    let rotated_image = image.map(|img| rotate_image(&img, &cam, angles, args.force)).transpose()?;
    let rotated_depth = depth.map(|d| rotate_depth(&d, &cam, angles, args.force)).transpose()?;
    let rotated_sparse = sparse.map(|s| augment_sparse_depth(&s, &cam, angles, args.force)).transpose()?;
    let prior = args.prior_out.as_ref().map(|_| augment_ground(&cam, angles, args.force)).transpose()?;

    if let (Some(p), Some(r)) = (&args.image_out, &rotated_image) {
        io::write_ppm(p, &r.image)?;
    }
    if let (Some(p), Some(d)) = (&args.depth_out, &rotated_depth) {
        io::write_pfm(p, d)?;
    }
    if let (Some(p), Some(s)) = (&args.sparse_out, &rotated_sparse) {
        io::write_pfm(p, s)?;
    }
    if let (Some(p), Some(g)) = (&args.prior_out, &prior) {
        io::write_pfm(p, &g.depth)?;
    }
    println!("pitch {} roll {} yaw {}", angles.pitch, angles.roll, angles.yaw);
    Ok(())
}

fn lab(args: LabArgs, seed: u64, ablate: bool) -> Result<()> {
    ensure_output(&args.report)?;
    for p in [&args.depth_out, &args.attention_out].into_iter().flatten() {
        ensure_output(p)?;
    }
    let spec = load_scene(args.scene.as_deref())?;
    let mut config: OptimConfig = match &args.config {
        Some(p) => {
            ensure_input(p)?;
            io::read_json(p)?
        }
        None => OptimConfig::default(),
    };
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    config.validate()?;
    let defaults = LossWeights::default();
    let weights = LossWeights {
        lambda_smooth: args.lambda_smooth.unwrap_or(defaults.lambda_smooth),
        lambda_const: args.lambda_const.unwrap_or(defaults.lambda_const),
        lambda_reg: args.lambda_reg.unwrap_or(defaults.lambda_reg),
        tau: match args.tau {
            Some(t) => t,
            None => spec.tau()?,
        },
    };
    weights.validate()?;
    if !(args.k0 > 0.0 && args.k0.is_finite()) {
        return Err(Error::Config(format!("--k0 must be > 0, got {}", args.k0)));
    }

    let run = if ablate { ablation } else { recover_scale };
    let (report, outcome): (RecoveryReport, OptimOutcome) = run(&spec, weights, &config, args.k0, seed)?;
    io::write_json(&args.report, &report)?;
    if let Some(p) = &args.depth_out {
        io::write_pfm(p, &outcome.depth.depth)?;
    }
    if let Some(p) = &args.attention_out {
        io::write_pfm(p, &outcome.attention.alpha)?;
    }
    println!(
        "pose scale {:.4} from {}, abs_rel {:.4}, mean attention {:.3}, {} steps",
        report.pose_scale, report.initial_pose_scale, report.metrics.abs_rel, report.mean_attention, report.steps
    );
    Ok(())
}

fn load_scene(path: Option<&Path>) -> Result<SceneSpec> {
    let spec = match path {
        Some(p) => {
            ensure_input(p)?;
            io::read_json(p)?
        }
        None => SceneSpec::reference(),
    };
    spec.validate()?;
    Ok(spec)
}

fn ensure_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("input file {} does not exist", path.display())))
    }
}

fn ensure_output(path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(Error::Config(format!("output directory {} does not exist", dir.display())));
    }
    if path.is_dir() {
        return Err(Error::Config(format!("output path {} is a directory", path.display())));
    }
    Ok(())
}
