//! Argument parsing for the `dualgp` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, exit_code};
use crate::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "dualgp", version, about = "Sparse variational GPs with dual conditioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; beats the config file and the environment.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model on the configured dataset.
    Fit(Common),
    /// Fit the first batch, then dual-condition on each later batch.
    Stream(Common),
    /// Batch Bayesian optimisation on the configured problem.
    Bo {
        #[command(flatten)]
        common: Common,
        /// Override the batch size (1 gives the sequential baseline).
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the number of iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Time dual conditioning for growing batches of new data.
    BenchConditioning(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.resolve_output_dir(common.out.clone());
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit(c) => {
            let r = commands::cmd_fit(&load(&c)?)?;
            println!("final ELBO {:.6} after {} iterations", r.final_elbo, r.iterations);
        }
        Command::Stream(c) => {
            let s = commands::cmd_stream(&load(&c)?)?;
            if let Some(g) = s.final_grid_gap {
                println!("grid gap to offline {g:.5}");
            }
        }
        Command::Bo {
            common,
            batch_size,
            iterations,
        } => {
            let mut cfg = load(&common)?;
            if let Some(k) = batch_size {
                if k == 0 {
                    return Err(Error::Config("--batch-size must be at least 1".into()));
                }
                cfg.bo.batch_size = k;
            }
            if let Some(n) = iterations {
                cfg.bo.iterations = n;
            }
            let h = commands::cmd_bo(&cfg)?;
            match h.final_incumbent() {
                Some(v) => println!("final incumbent {v:.5}"),
                None => println!("no feasible point observed"),
            }
        }
        Command::BenchConditioning(c) => {
            let s = commands::cmd_bench_conditioning(&load(&c)?)?;
            for r in &s.series {
                println!(
                    "{}: t(max)/t(min) = {:.3}, slope {:.3}",
                    r.likelihood, r.ratio, r.loglog_slope
                );
            }
        }
    }
    Ok(())
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let r = dispatch(cli.command);
    if let Err(e) = &r {
        eprintln!("error: {e}");
    }
    exit_code(&r)
}
