//! Command-line front end: shape generation, pretraining, reconstruction,
//! sliding-window scenes and evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use saconet::eval::{compute_metrics, sample_mesh, sample_shape};
use saconet::geometry::{add_noise, normalize_to_unit_cube, random_shape, sample_surface, ShapeGenConfig, DEFAULT_PADDING};
use saconet::io::{
    load_checkpoint, load_mesh, load_point_cloud, load_shape, load_shapes, save_checkpoint, save_mesh, save_point_cloud,
    save_shape, save_trace, RunConfig,
};
use saconet::network::{ConvOccNet, InitMode};
use saconet::pipeline::{derive_seed, pretrain, reconstruct, OptMode, SAOptConfig};
use saconet::scene::{default_margin, plan_windows, reconstruct_scene};

#[derive(Parser, Debug)]
#[command(name = "saconet", version, about = "Point cloud surface reconstruction with sign-agnostic optimization")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write random CSG shapes as JSON specs.
    GenShapes {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_primitives: usize,
    },
    /// Sample a noisy point cloud from a shape spec.
    Sample {
        #[arg(long)]
        shape: PathBuf,
        #[arg(long, default_value_t = 30_000)]
        points: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `.ply` for PLY, anything else for XYZ.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a network on a directory of shape specs.
    Pretrain {
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the initialization and pretraining seeds of the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Reconstruct a mesh from a point cloud.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        #[arg(long)]
        sa_iters: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sliding-window reconstruction of a large cloud.
    Scene {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        core: usize,
        /// Defaults to half the network's receptive field.
        #[arg(long)]
        margin: Option<usize>,
        /// Global grid resolution; defaults to the network's grid resolution.
        #[arg(long)]
        res: Option<usize>,
        #[arg(long, value_enum, default_value_t = Mode::Feedforward)]
        mode: Mode,
        #[arg(long)]
        sa_iters: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Writes the window plan as text.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Score a mesh against a ground-truth shape spec.
    Eval {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        gt_shape: PathBuf,
        #[arg(long, default_value_t = saconet::eval::DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Feedforward,
    Full,
    EncoderOnly,
}

fn load_config(path: Option<&Path>) -> saconet::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Test-time optimization settings for `mode`, or `None` for feed-forward.
fn sa_config(cfg: &RunConfig, mode: Mode, iterations: Option<usize>, seed: u64) -> saconet::Result<Option<SAOptConfig>> {
    let mode = match mode {
        Mode::Feedforward => return Ok(None),
        Mode::Full => OptMode::Full,
        Mode::EncoderOnly => OptMode::EncoderOnly,
    };
    let sa = SAOptConfig {
        iterations: iterations.unwrap_or(cfg.sa.iterations),
        mode,
        seed,
        ..cfg.sa
    };
    sa.validate()?;
    Ok(Some(sa))
}

fn run(command: Command) -> saconet::Result<()> {
    match command {
        Command::GenShapes {
            count,
            seed,
            out,
            max_primitives,
        } => {
            let gen = ShapeGenConfig {
                max_primitives,
                ..ShapeGenConfig::default()
            };
            gen.validate()?;
            std::fs::create_dir_all(&out)?;
            for i in 0..count {
                let shape = random_shape(derive_seed(seed, i as u64), &gen)?;
                save_shape(&shape, &out.join(format!("shape_{i:04}.json")))?;
            }
            info!("wrote {count} shapes to {}", out.display());
        }
        Command::Sample {
            shape,
            points,
            noise,
            seed,
            out,
        } => {
            let spec = load_shape(&shape)?;
            let clean = sample_surface(&spec, points, derive_seed(seed, 0))?;
            let pc = if noise > 0.0 { add_noise(&clean, noise, derive_seed(seed, 1))? } else { clean };
            save_point_cloud(&pc, &out)?;
        }
        Command::Pretrain {
            shapes,
            config,
            out,
            seed,
            trace,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.pretrain.seed = s;
                if let InitMode::Random { .. } = cfg.init {
                    cfg.init = InitMode::Random { seed: s };
                }
            }
            let specs: Vec<_> = load_shapes(&shapes)?.into_iter().map(|(_, s)| s).collect();
            info!("pretraining on {} shapes", specs.len());
            let model = ConvOccNet::new(cfg.net, cfg.init)?;
            let trained = pretrain(model, &specs, &cfg.pretrain)?;
            save_checkpoint(&trained.model, &out)?;
            if let Some(t) = trace {
                save_trace(&trained.trace, &t)?;
            }
        }
        Command::Reconstruct {
            ckpt,
            input,
            mode,
            sa_iters,
            seed,
            config,
            out,
            trace,
        } => {
            let cfg = load_config(config.as_deref())?;
            let sa = sa_config(&cfg, mode, sa_iters, seed)?;
            let model = load_checkpoint(&ckpt)?;
            let pc = load_point_cloud(&input)?;
            let rec = reconstruct(model, &pc, sa.as_ref(), &cfg.mise)?;
            info!(
                "{} vertices, {} faces, {} occupancy evaluations",
                rec.mesh.vertices.len(),
                rec.mesh.faces.len(),
                rec.evaluations
            );
            save_mesh(&rec.mesh, &out)?;
            if let Some(t) = trace {
                save_trace(&rec.trace, &t)?;
            }
        }
        Command::Scene {
            ckpt,
            input,
            core,
            margin,
            res,
            mode,
            sa_iters,
            seed,
            config,
            out,
            plan,
        } => {
            let cfg = load_config(config.as_deref())?;
            let sa = sa_config(&cfg, mode, sa_iters, seed)?;
            let model = load_checkpoint(&ckpt)?;
            let pc = load_point_cloud(&input)?;
            let res = res.unwrap_or(model.config().grid_res);
            let windows = plan_windows(res, core, margin.unwrap_or_else(|| default_margin(&model)))?;
            if let Some(p) = plan {
                std::fs::write(p, windows.to_text())?;
            }
            let scene = reconstruct_scene(&model, &pc, &windows, sa.as_ref())?;
            info!(
                "{} windows ({} empty), {} faces",
                windows.windows.len(),
                scene.empty_windows.len(),
                scene.mesh.faces.len()
            );
            save_mesh(&scene.mesh, &out)?;
        }
        Command::Eval {
            mesh,
            gt_shape,
            tau,
            report,
            samples,
            seed,
        } => {
            let mesh = load_mesh(&mesh)?;
            let spec = load_shape(&gt_shape)?;
            let gt = sample_shape(&spec, samples, derive_seed(seed, 0))?;
            let pred = sample_mesh(&mesh, samples, derive_seed(seed, 1))?;
            // both sets are scored in the unit cube fitted to the ground truth
            let frame = saconet::geometry::PointCloud::from_points(gt.points.clone())?;
            let (_, tf) = normalize_to_unit_cube(&frame, DEFAULT_PADDING)?;
            let to_cube = |p| tf.to_cube(p);
            let metrics = compute_metrics(&pred.map(to_cube, |n| n), &gt.map(to_cube, |n| n), tau)?;
            std::fs::write(&report, metrics.to_json()?)?;
            println!("{}", metrics.to_json()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
