use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cfnn::checkpoint::load_checkpoint;
use cfnn::data_io::{load_mnist, MnistSplit};
use cfnn::trainer::evaluate_accuracy;
use clap::{Parser, Subcommand};

mod config;
mod experiments;
mod output;

use config::{Experiment, RunConfig};
use output::OutDir;

#[derive(Parser)]
#[command(
    name = "cfnn",
    version,
    about = "Collaborative network training and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed (and every nested seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print a complete default config.
    PrintConfig {
        #[arg(long, value_enum, default_value_t = Experiment::Mnist)]
        experiment: Experiment,
    },
    /// Test-set accuracy of a saved MNIST network.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
    },
    /// Describe a saved network.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            cfg.apply_seed(seed);
            if let Some(dir) = out_dir {
                cfg.paths.out_dir = dir;
            }
            let out = OutDir::create(&cfg.paths.out_dir)?;
            let summary = experiments::run(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::PrintConfig { experiment } => {
            print!("{}", RunConfig::defaults(experiment).to_toml()?);
        }
        Command::Eval {
            checkpoint,
            data_dir,
        } => {
            let net = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let test = load_mnist(&data_dir, MnistSplit::Test)
                .with_context(|| format!("loading MNIST from {}", data_dir.display()))?;
            let acc = evaluate_accuracy(&net, &test)?;
            println!("{}", serde_json::to_string_pretty(&acc)?);
        }
        Command::Inspect { checkpoint } => {
            let net = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let spec = net.spec();
            println!("input_dim: {}", spec.input_dim);
            println!("bias: {}", spec.bias);
            for j in 0..net.subsystem_count() {
                let w = net.trunk_weight(j);
                let p = net.pseudo_out_weight(j);
                println!(
                    "subsystem {}: trunk {}x{} ({}), pseudo-output {}x{}",
                    j + 1,
                    w.rows(),
                    w.cols(),
                    spec.trunk[j].activation,
                    p.rows(),
                    p.cols()
                );
            }
            let c = net.collab_weight();
            println!(
                "collaborative: {}x{} ({}), output activation {}",
                c.rows(),
                c.cols(),
                spec.collab_activation,
                spec.output_activation
            );
        }
    }
    Ok(())
}
