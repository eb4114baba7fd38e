mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use commands::Context;
use config::{EstimatorChoice, RunConfig};
use error::{CliError, CliResult};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Simulate, estimate and analyse latent skill-formation models.
#[derive(Parser)]
#[command(name = "skillform", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiply every skill measure by this factor.
    #[arg(long, global = true)]
    scale_theta: Option<f64>,
    #[arg(long, global = true, value_enum)]
    estimator: Option<EstimatorChoice>,
    /// Comma-separated restriction set, e.g. `age_invariant_skill,age_invariant_invest,psi_one`.
    #[arg(long, global = true)]
    restrictions: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a panel of measures from the model.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the two-step estimators to a panel.
    Estimate {
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Evaluate the figure functionals on estimates or on the model itself.
    Counterfact {
        /// Estimate files written by `estimate`.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Also evaluate the configured model.
        #[arg(long)]
        truth: bool,
    },
    /// Build an observationally equivalent model under another restriction set.
    Equiv,
    /// Monte Carlo replications over a scale grid.
    Mc,
}

fn context(cli: &Cli) -> CliResult<Context> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => (
            RunConfig::load(p)?,
            p.parent().unwrap_or(Path::new(".")).to_path_buf(),
        ),
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.scale_theta {
        cfg.scale_theta = s;
    }
    if let Some(e) = cli.estimator {
        cfg.estimator = e;
    }
    if let Some(r) = &cli.restrictions {
        cfg.restrictions = Some(r.clone());
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Command::Simulate { n: Some(n) } = cli.command {
        cfg.simulate.n = Some(n);
    }
    if let Command::Estimate { panel: Some(p) } = &cli.command {
        cfg.estimate.panel = Some(p.clone());
    }
    let spec = cfg.spec.load(&base)?;
    Ok(Context { cfg, spec })
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = context(&cli)?;
    if ctx.cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(ctx.cfg.threads)
            .build_global()
            .map_err(|e| CliError::config("threads", e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate { .. } => commands::simulate(&ctx),
        Command::Estimate { .. } => commands::estimate_cmd(&ctx),
        Command::Counterfact { input, truth } => commands::counterfact(&ctx, input, *truth),
        Command::Equiv => commands::equiv(&ctx),
        Command::Mc => commands::mc(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
