//! `dsgt`: run DSGT experiments, print theory reports, dump networks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsgt_core::harness::{self, output, HarnessError, RunConfig};

/// Exit code for command-line usage errors.
const EXIT_USAGE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "dsgt", version, about = "Distributed stochastic gradient tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured experiment and write series, steady-state, and theory files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's replication count.
        #[arg(long)]
        replications: Option<usize>,
        /// Also write every replication's raw series.
        #[arg(long)]
        per_replication: bool,
    },
    /// Print the theory report for the configured instance as JSON.
    Theory {
        #[arg(long)]
        config: PathBuf,
    },
    /// Network utilities.
    Topology {
        #[command(subcommand)]
        action: TopologyCommand,
    },
    /// Run the experiment once per agent count and summarize steady errors.
    SweepN {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated agent counts, e.g. 10,25,100.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum TopologyCommand {
    /// Write the mixing matrix and its spectral summary.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>, replications: Option<usize>) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, HarnessError> {
    serde_json::to_string_pretty(value).map_err(|e| HarnessError::Config(e.to_string()))
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            replications,
            per_replication,
        } => {
            let cfg = load(&config, seed, replications)?;
            let result = harness::run_detailed(&cfg, per_replication)?;
            output::write_run(&out, &result)?;
            log::info!(
                "wrote {} ({} replications, {:.2}s)",
                out.display(),
                cfg.replications,
                result.meta.wall_time_secs
            );
            println!("{}", to_json(&result.steady)?);
        }
        Command::Theory { config } => {
            let cfg = load(&config, None, None)?;
            let inst = harness::build_instance(&cfg)?;
            println!("{}", to_json(&inst.theory(&cfg)?)?);
        }
        Command::Topology {
            action: TopologyCommand::Dump { config, out },
        } => {
            let cfg = load(&config, None, None)?;
            let inst = harness::build_instance(&cfg)?;
            let summary = output::write_topology(&out, &cfg, &inst)?;
            println!("{}", to_json(&summary)?);
        }
        Command::SweepN { config, values, out } => {
            let cfg = load(&config, None, None)?;
            let sweep = harness::sweep_n(&cfg, &values)?;
            output::write_sweep(&out, &sweep)?;
            println!("{}", to_json(&sweep.summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
