//! `motrans` command-line driver. Log verbosity follows `RUST_LOG`
//! (default `warn`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use motrans::adjoint::gradient_check;
use motrans::io::{export_frames, parse_point_cloud, write_point_cloud, PointCloud, RunConfig};
use motrans::pipeline::{
    exit_code, gradcheck_scene, map_parts, particles_from_cloud, run_ablation, run_pipeline, simulate_frames, Inputs,
};
use motrans::synth::{synth_scene, write_scene, SceneKind, SynthParams};
use motrans::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "motrans", version, about = "Physics-based part-wise motion transfer", arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded, bit-reproducible run.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Grid cells along the longest axis.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Substeps per frame.
    #[arg(long, global = true)]
    substeps: Option<usize>,
    /// Young's modulus.
    #[arg(long, global = true)]
    young: Option<f64>,
    #[arg(long, global = true)]
    poisson: Option<f64>,
    /// Optimizer iterations per phase.
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    tv_weight: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forward-simulate the target cloud and export its frames.
    Simulate {
        /// Point cloud to simulate (defaults to the config's target).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        frames: usize,
        #[arg(long, default_value_t = 1.0 / 24.0)]
        frame_dt: f64,
    },
    /// Map reference parts onto the target and write the labeled cloud.
    Match,
    /// Run the full transfer pipeline and export frames.
    Transfer,
    /// Compare adjoint gradients with finite differences on an elastic blob.
    Gradcheck {
        /// Particles per side of the blob.
        #[arg(long, default_value_t = 7)]
        side: usize,
        #[arg(long, default_value_t = 16)]
        probes: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Generate a synthetic scene and a run config pointing at it, in
    /// `--out-dir` (default: a directory named after the scene).
    Synth {
        /// box, two-box-hinge or biped-stick
        kind: SceneKind,
        /// Target size relative to the reference.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Reference frames (phases + 1).
        #[arg(long, default_value_t = 2)]
        frames: usize,
        #[arg(long)]
        spacing: Option<f64>,
    },
    /// Optimized phase versus manually scaled bone velocities.
    Ablate {
        /// Manual velocity scale; repeat for a sweep.
        #[arg(long = "alpha")]
        alphas: Vec<f64>,
    },
}

fn load_config(c: &Common, require: bool) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None if require => return Err(Error::Config("this command needs --config".into())),
        None => RunConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    cfg.deterministic |= c.deterministic;
    if let Some(v) = &c.out_dir {
        cfg.output.out_dir = v.clone();
    }
    if c.resolution.is_some() {
        cfg.sim.resolution = c.resolution;
    }
    if let Some(v) = c.substeps {
        cfg.sim.substeps = v;
    }
    if let Some(v) = c.young {
        cfg.sim.youngs = v;
    }
    if let Some(v) = c.poisson {
        cfg.sim.poisson = v;
    }
    if let Some(v) = c.iters {
        cfg.optimizer.iters = v;
    }
    if let Some(v) = c.lr {
        cfg.optimizer.lr = v;
    }
    if let Some(v) = c.tv_weight {
        cfg.optimizer.tv_weight = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command, common: &Common) -> Result<()> {
    match command {
        Command::Simulate { input, frames, frame_dt } => {
            let cfg = load_config(common, false)?;
            let path = input
                .or_else(|| cfg.inputs.target.clone())
                .ok_or_else(|| Error::Config("simulate needs --input or inputs.target".into()))?;
            let particles = particles_from_cloud(&parse_point_cloud(&path)?, &cfg)?;
            let states = simulate_frames(&particles, frames, frame_dt, &cfg)?;
            let clouds: Vec<PointCloud> = states.iter().map(PointCloud::from_state).collect();
            let m = export_frames(&clouds, frame_dt, &cfg.output.out_dir, cfg.output.format)?;
            println!("wrote {} frames to {}", m.count, cfg.output.out_dir.display());
        }
        Command::Match => {
            let cfg = load_config(common, true)?;
            let inputs = Inputs::load(&cfg)?;
            let m = map_parts(&inputs, cfg.matching.outlier_k)?;
            let parts = inputs.sequence.bone_count();
            for b in 0..parts {
                let targets = m.target.labels.iter().filter(|l| **l == Some(b)).count();
                let particles = m.particle_labels.iter().filter(|l| **l == Some(b)).count();
                println!("part {b}: {targets} target vertices, {particles} particles");
            }
            println!("unmatched target vertices: {}", m.target.labels.iter().filter(|l| l.is_none()).count());
            println!("particles outside every part box: {}", m.unassigned_particles);
            std::fs::create_dir_all(&cfg.output.out_dir).map_err(|e| Error::Io { path: cfg.output.out_dir.clone(), source: e })?;
            let path = cfg.output.out_dir.join("labels.bin");
            let labels = m.particle_labels.clone();
            write_point_cloud(&path, &PointCloud::from_state(&inputs.particles).with_labels(labels))?;
            println!("wrote {}", path.display());
        }
        Command::Transfer => {
            let cfg = load_config(common, true)?;
            let out = run_pipeline(&cfg)?;
            for p in &out.run.phases {
                println!("phase {}: terminal error {:.4e} (best iteration {})", p.phase, p.terminal_error(), p.best_iter);
            }
            println!("wrote {} frames to {}", out.manifest.count, out.out_dir.display());
        }
        Command::Gradcheck { side, probes, tolerance } => {
            let cfg = load_config(common, false)?;
            let substeps = common.substeps.unwrap_or(20);
            let (scene, sim) = gradcheck_scene(side, substeps, &cfg)?;
            let report = gradient_check(&scene, &sim, probes, cfg.seed)?;
            for p in &report.probes {
                println!(
                    "particle {:4} axis {}: adjoint {:+.6e} fd {:+.6e} rel {:.2e}",
                    p.particle, p.axis, p.adjoint, p.finite_difference, p.relative_error
                );
            }
            println!(
                "{} particles, {substeps} substeps: max relative error {:.3e} (mean {:.3e})",
                scene.len(),
                report.max_relative_error,
                report.mean_relative_error
            );
            if report.max_relative_error > tolerance {
                return Err(Error::GradientMismatch { max_relative_error: report.max_relative_error, tolerance });
            }
        }
        Command::Synth { kind, scale, frames, spacing } => {
            let cfg = load_config(common, false)?;
            let defaults = SynthParams::default();
            let params = SynthParams {
                seed: cfg.seed,
                target_scale: scale,
                frames,
                spacing: spacing.unwrap_or(defaults.spacing),
                ..defaults
            };
            let scene = synth_scene(kind, &params)?;
            let dir = common.out_dir.clone().unwrap_or_else(|| PathBuf::from(kind.to_string()));
            // frames of the later transfer land next to the inputs
            let mut run_cfg = cfg.clone();
            run_cfg.output.out_dir = PathBuf::from("frames");
            let path = write_scene(&scene, &dir, &run_cfg)?;
            println!("{} particles, {} bones, {} frames", scene.particles.len(), scene.sequence.bone_count(), frames);
            println!("wrote {}", path.display());
        }
        Command::Ablate { alphas } => {
            let mut cfg = load_config(common, true)?;
            if !alphas.is_empty() {
                cfg.ablation.alphas = alphas;
            }
            let inputs = Inputs::load(&cfg)?;
            let report = run_ablation(&inputs, &cfg)?;
            println!("phase {}: optimized terminal error {:.4e}", report.phase, report.optimized_error);
            for (a, e) in &report.manual {
                println!("alpha {a}: terminal error {e:.4e}");
            }
            if let Some((a, e)) = report.best_manual() {
                let verdict = if report.optimized_error <= e { "beats" } else { "loses to" };
                println!("optimized run {verdict} the best manual run (alpha {a})");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let needs_config = matches!(cli.command, Command::Match | Command::Transfer | Command::Ablate { .. });
    if needs_config && cli.common.config.is_none() {
        let e = Cli::command().error(clap::error::ErrorKind::MissingRequiredArgument, "this command needs --config <PATH>");
        let _ = e.print();
        return ExitCode::from(1);
    }
    match run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
