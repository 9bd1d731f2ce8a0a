//! Command-line entry point: demo generation, training, evaluation,
//! ablations, and metrics plotting. Exit codes: 0 success, 2 config
//! error, 3 data error, 4 numeric error, 1 anything else.

use clap::{Parser, Subcommand};
use memact::ablate::{run_ablation, Axis, ALL_AXES};
use memact::config::load_config;
use memact::env::{generate_demos, TaskKind, TaskSpec};
use memact::episode::{read_dataset, write_dataset};
use memact::error::Result;
use memact::eval::{evaluate_checkpoint_on, Ensemble};
use memact::plot::plot_metrics;
use memact::train::{load_checkpoint, train};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "memact", about = "Memory-bank-augmented diffusion policy at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and write a demo dataset.
    GenDemos {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy from a config file and a demo dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with rollouts.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: TaskKind,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// `off`, `adaptive`, or `adaptive:ALPHA:HORIZON`.
        #[arg(long, default_value = "off")]
        ensemble: Ensemble,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
    },
    /// Train and evaluate ablation variants along the memory axes.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated axes (memory_type,length,retrieval,fusion,
        /// consolidation); defaults to all five.
        #[arg(long)]
        axes: Option<String>,
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render loss/score charts from a metrics CSV.
    PlotMetrics {
        #[arg(long)]
        csv: PathBuf,
        /// Output path prefix; emits `<out>_loss.png` (+ `_score.png`).
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDemos { task, n, seed, out } => {
            let spec = TaskSpec::new(task);
            let demos = generate_demos(&spec, n, seed)?;
            write_dataset(&out, &demos)?;
            println!("wrote {} episodes to {}", demos.len(), out.display());
        }
        Command::Train { config, demos, out } => {
            let cfg = load_config(&config)?;
            let dataset = read_dataset(&demos)?;
            let ckpt = train(&cfg, &dataset, &out)?;
            println!(
                "trained {} steps on {}; checkpoint at {}",
                ckpt.step,
                cfg.task.name(),
                out.join("checkpoint.json").display()
            );
        }
        Command::Eval { checkpoint, task, trials, ensemble, seed } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let spec = TaskSpec::new(task);
            let report = evaluate_checkpoint_on(&ckpt, &spec, trials, &ensemble, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { config, axes, demos, trials, seed, out } => {
            let cfg = load_config(&config)?;
            let dataset = read_dataset(&demos)?;
            let axes: Vec<Axis> = match axes {
                None => ALL_AXES.to_vec(),
                Some(list) => list
                    .split(',')
                    .map(|a| a.trim().parse::<Axis>())
                    .collect::<Result<Vec<_>>>()?,
            };
            let rows = run_ablation(&cfg, &axes, &dataset, trials, seed, &out)?;
            println!(
                "wrote {} ablation rows to {}",
                rows.len(),
                out.join("ablation.csv").display()
            );
        }
        Command::PlotMetrics { csv, out } => {
            for p in plot_metrics(&csv, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
