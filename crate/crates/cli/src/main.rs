use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use dtesim_cli::{run_with_jobs, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "dtesim",
    version,
    about = "Assurance and interim-analysis simulator for delayed-effect survival trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Operating characteristics of the configured design.
    Oc(RunArgs),
    /// Operating characteristics across one-look designs.
    Sweep(RunArgs),
    /// Design-stage Bayesian predictive probabilities at interim fractions.
    Bpp(RunArgs),
    /// Group-sequential boundaries only.
    Boundaries(RunArgs),
    /// Start the HTTP job service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Jobs allowed to compute concurrently.
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the result here instead of stdout or the configured path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

fn execute(command: Command, args: RunArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = RunConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if args.jobs == Some(0) {
        anyhow::bail!("`--jobs` must be at least 1");
    }
    let doc = run_with_jobs(&cfg, command, args.jobs, None)?;
    let bytes = doc.render(cfg.output.format);
    match args.out.or(cfg.output.path) {
        Some(path) => {
            std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Oc(a) => execute(Command::Oc, a),
        Cmd::Sweep(a) => execute(Command::Sweep, a),
        Cmd::Bpp(a) => execute(Command::Bpp, a),
        Cmd::Boundaries(a) => execute(Command::Boundaries, a),
        Cmd::Serve { addr, workers } => tokio::runtime::Runtime::new()
            .map_err(anyhow::Error::from)
            .and_then(|rt| rt.block_on(dtesim_cli::service::serve(addr, workers))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
