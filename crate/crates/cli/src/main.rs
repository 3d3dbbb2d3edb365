//! `mlmunmix`: synthetic scenes, classic solvers and autoencoder unmixing
//! from the command line.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlmunmix::model::Mode;

use commands::{ClassicMethod, Ctx};
use config::{RunConfig, SweepAxis};
use failure::{code, Failure};

const EXIT_CODES: &str = "Exit codes:
  0  success
  2  invalid command line or configuration
  3  missing input artifact (the message names the stage to run first)
  4  I/O or file format error
  5  invalid data or parameters (shapes, architecture, degenerate data)
  6  non-finite training loss
  7  a solver did not converge (outputs are still written)";

#[derive(Parser, Debug)]
#[command(name = "mlmunmix", version, about = "Multilinear-mixing hyperspectral unmixing", after_help = EXIT_CODES)]
struct Cli {
    /// JSON run configuration; defaults describe a 64x64 desk-scale scene.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bitwise reproducible runs.
    #[arg(long, global = true, env = "MLMUNMIX_THREADS")]
    threads: Option<usize>,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, global = true, default_value_t = 1)]
    repeats: usize,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a scene (one per entry of `snr_levels`).
    Generate,
    /// Extract endmembers with VCA.
    Vca {
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// FCLS, supervised MLM or unsupervised MLMp on VCA endmembers.
    UnmixClassic {
        #[arg(long, value_enum)]
        method: ClassicMethod,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Train an autoencoder initialized from the VCA endmembers.
    Train {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Abundance, P and reconstruction maps from trained networks.
    Infer {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Score runs against the scene ground truth.
    Evaluate {
        /// Comma-separated subset of fcls, supervised, mlmp, 1dae, 3dae.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Train and score one network per batch size or patch size.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "1d" => Ok(Mode::OneD),
        "3d" => Ok(Mode::ThreeD),
        _ => Err(format!("expected 1d or 3d, got {s:?}")),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    if cli.repeats == 0 {
        return Err(Failure::Config("--repeats must be at least 1".into()));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    cfg.validate()?;
    let ctx = Ctx {
        hash: cfg.hash(),
        cfg,
        repeats: cli.repeats,
    };
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Vca { scene } => commands::run_vca(&ctx, &ctx.scene_dir(scene)),
        Command::UnmixClassic { method, scene } => commands::unmix_classic(&ctx, &ctx.scene_dir(scene), method),
        Command::Train { mode, patch, scene } => commands::run_train(&ctx, &ctx.scene_dir(scene), mode, patch),
        Command::Infer { mode, scene } => commands::run_infer(&ctx, &ctx.scene_dir(scene), mode),
        Command::Evaluate { methods, scene } => commands::run_evaluate(&ctx, &ctx.scene_dir(scene), &methods),
        Command::Sweep { axis, scene } => commands::run_sweep(&ctx, &ctx.scene_dir(scene), axis),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(code::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
