use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use obsdrop::exec::with_threads;
use obsdrop_cli::config::Config;
use obsdrop_cli::runner::{self, Context, RunError};

/// Train and analyse agents that only sometimes see the real world.
#[derive(Debug, Parser)]
#[command(name = "obsdrop", version)]
struct Cli {
    /// TOML experiment configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output root for run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reuse existing run directories and skip completed runs.
    #[arg(long, global = true)]
    resume: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train policy and world model jointly at the configured peek probability.
    Train,
    /// Train over the configured grid of peek probabilities and seeds.
    Sweep,
    /// Train policies inside learned world models and deploy them for real.
    Dream {
        /// World-model checkpoints (joint or model-only).
        checkpoints: Vec<PathBuf>,
        /// Fit a supervised baseline model from this training run instead.
        #[arg(long)]
        baseline_from: Option<PathBuf>,
    },
    /// Evaluate a checkpoint in the real environment.
    Eval { checkpoint: PathBuf },
    /// Random-search stabilization transfer experiment.
    Stability,
    /// Correlation maps of a grid-world model.
    Corr { checkpoint: PathBuf },
    /// Render metrics, sweep aggregates, correlation maps or a rollout to SVG.
    Render {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<Config, RunError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), RunError> {
    let cfg = resolve(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(RunError::Usage("no subcommand given; see --help".into()));
    };
    let threads = cfg.threads;
    let ctx = Context::new(cfg, cli.resume);
    with_threads(threads, || match command {
        Command::Train => runner::cmd_train(&ctx).map(drop),
        Command::Sweep => runner::cmd_sweep(&ctx).map(drop),
        Command::Dream {
            checkpoints,
            baseline_from,
        } => runner::cmd_dream(&ctx, checkpoints, baseline_from.as_deref()).map(drop),
        Command::Eval { checkpoint } => runner::cmd_eval(&ctx, checkpoint).map(drop),
        Command::Stability => runner::cmd_stability(&ctx).map(drop),
        Command::Corr { checkpoint } => runner::cmd_corr(&ctx, checkpoint).map(drop),
        Command::Render { input, output } => runner::cmd_render(&ctx, input, output.as_deref()).map(drop),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
