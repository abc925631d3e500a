mod config;
mod error;
mod manifest;
mod model;
mod pgm;
mod phantom;
mod synthesize;
mod transform;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tbm_core::validate::{self, ValidateOptions};

use config::PipelineConfig;
use error::CliError;
use manifest::Manifest;
use phantom::{Family, PhantomArgs};

#[derive(Parser)]
#[command(name = "tbm", version, about = "Transport-based morphometry of density volumes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for permutation tests and phantoms; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize inputs, build the template and embed every subject.
    Transform(ConfigArg),
    /// Fit the configured model to the embeddings.
    Model(ConfigArg),
    /// Sample volumes along the model direction.
    Synthesize(ConfigArg),
    /// Run the built-in numerical checks.
    Validate {
        /// Comma-separated check numbers (1-based).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
        #[arg(long, hide = true)]
        tamper_gradient: bool,
    },
    /// Write a synthetic cohort with a matching pipeline config.
    Phantom {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Grid size, e.g. `64,64` or `32,32,32`.
        #[arg(long, value_delimiter = ',', default_values_t = [64, 64])]
        dims: Vec<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        jitter: Option<f64>,
    },
}

fn pool(jobs: Option<usize>) -> Result<(), CliError> {
    match jobs {
        Some(0) => Err(CliError::Config("jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string())),
        None => Ok(()),
    }
}

fn load(cli: &Cli, path: &Path) -> Result<(PipelineConfig, PathBuf), CliError> {
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set out".into()))?;
    pool(cfg.jobs)?;
    Ok((cfg, out))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Transform(a) => {
            let (cfg, out) = load(cli, &a.config)?;
            transform::run(&cfg, &out)
        }
        Command::Model(a) => {
            let (cfg, out) = load(cli, &a.config)?;
            model::run(&cfg, &out)
        }
        Command::Synthesize(a) => {
            let (cfg, out) = load(cli, &a.config)?;
            synthesize::run(&cfg, &out)
        }
        Command::Validate { only, tamper_gradient } => {
            pool(cli.jobs)?;
            let opts = ValidateOptions {
                seed: cli.seed.unwrap_or(0),
                only: only.clone(),
                tamper_gradient: *tamper_gradient,
            };
            let report = validate::run(&opts)?;
            let text = report.render();
            print!("{text}");
            if let Some(out) = &cli.out {
                let mut m = Manifest::open(out)?;
                m.write("report.txt", text.as_bytes())?;
                m.finish()?;
            }
            if report.all_passed() {
                Ok(())
            } else {
                Err(CliError::Failed("one or more checks failed".into()))
            }
        }
        Command::Phantom {
            family,
            count,
            dims,
            sigma,
            step,
            noise,
            separation,
            jitter,
        } => {
            pool(cli.jobs)?;
            let out = cli
                .out
                .clone()
                .ok_or_else(|| CliError::Config("phantom needs --out".into()))?;
            let args = PhantomArgs {
                family: *family,
                count: *count,
                dims: dims.clone(),
                sigma: *sigma,
                step: *step,
                noise: *noise,
                separation: *separation,
                jitter: *jitter,
            };
            phantom::run(&args, cli.seed.unwrap_or(0), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
