use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use agm_mcmc::experiment::{ensure_writable, fmt_num, run_experiment, write_outputs, ExperimentConfig};

#[derive(Parser)]
#[command(name = "agm-mcmc", version, about = "Adaptive Gaussian-mixture Metropolis-Hastings experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the number of runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `outputs.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!(
                "{}: ok ({} runs, d = {}, {} components, t_tot = {})",
                cfg.name,
                cfg.runs,
                cfg.target.dim(),
                cfg.chain.components,
                cfg.chain.t_tot
            );
        }
        Command::Run {
            config,
            runs,
            seed,
            out,
            workers,
        } => {
            let mut cfg = load(&config)?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let dir = out
                .or_else(|| cfg.outputs.dir.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            ensure_writable(&dir).with_context(|| format!("output directory {}", dir.display()))?;

            let outcome = run_experiment(&cfg)?;
            let files = write_outputs(&outcome, &dir)?;
            let a = &outcome.aggregate;
            println!("experiment   {}", cfg.name);
            println!("runs         {}", a.runs);
            for (k, v) in a.mse_mean.iter().enumerate() {
                println!("mse_mean_{k}   {}", fmt_num(*v));
            }
            println!("mse_z        {}", fmt_num(a.mse_z));
            for (k, v) in a.mean_lag1.iter().enumerate() {
                println!("lag1_corr_{k}  {}", fmt_num(*v));
            }
            println!("accept_rate  {}", fmt_num(a.mean_accept_rate));
            if a.flagged_z > 0 {
                println!("warning: {} runs had a low-ESS Z estimate", a.flagged_z);
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
