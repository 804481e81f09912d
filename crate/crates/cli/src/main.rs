use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mtnn_core::data::{generate_synthetic, write_csv};
use mtnn_core::harness::{emit_outputs, run_experiment, ExperimentConfig};
use mtnn_core::optim::Method;
use mtnn_core::verify::audit_costs;
use mtnn_core::{MtnnArchitecture, Rng};

#[derive(Parser)]
#[command(name = "mtnn", version, about = "Multi-task network training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seed sweep described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds; overrides `run.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Optimizer(s); overrides `optimizer.kind`.
        #[arg(long, value_delimiter = ',')]
        optimizer: Option<Vec<String>>,
    },
    /// Print parameter counts and backward costs of the quadrant/circle network.
    Audit {
        #[arg(long, default_value_t = 512)]
        width: usize,
    },
    /// Write a synthetic quadrant/circle dataset as CSV.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn train(config: PathBuf, out: Option<PathBuf>, seeds: Option<Vec<u64>>, optimizer: Option<Vec<String>>) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::from_file(&config)?;
    if let Some(seeds) = seeds {
        cfg = cfg.with_seeds(seeds)?;
    }
    if let Some(kinds) = optimizer {
        let methods = kinds.iter().map(|k| Method::parse(k)).collect::<Result<Vec<_>, _>>()?;
        cfg = cfg.with_optimizers(methods)?;
    }
    let Some(dir) = out.or_else(|| cfg.output_dir.clone()) else {
        bail!("no output directory: set output.dir or pass --out");
    };

    let experiment = run_experiment(&cfg)?;
    let files = emit_outputs(&cfg, &experiment.histories, &experiment.summary, &dir)
        .with_context(|| format!("writing outputs to {}", dir.display()))?;

    for o in &experiment.summary.optimizers {
        print!("{:<20} runs={} excluded={}", o.method.name(), o.runs, o.excluded);
        for m in &o.mean_metrics {
            print!(
                "  task{}: recall={:.4} precision={:.4} f1={:.4}",
                m.task + 1,
                m.recall,
                m.precision,
                m.f1
            );
        }
        println!("  tail_val_std={:.3e}", o.median_tail_val_std);
    }
    println!("wrote {} files to {}", files.len(), dir.display());

    let failed = experiment.failed_runs();
    if failed > 0 {
        for h in experiment.histories.iter().filter(|h| h.diagnostic.is_some()) {
            eprintln!(
                "run {} seed {} stopped: {}",
                h.method,
                h.seed,
                h.diagnostic.as_deref().unwrap_or_default()
            );
        }
        eprintln!("{failed} run(s) diverged");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            seeds,
            optimizer,
        } => train(config, out, seeds, optimizer),
        Command::Audit { width } => {
            if width == 0 {
                eprintln!("error: width must be at least 1");
                return ExitCode::FAILURE;
            }
            print!("{}", audit_costs(&MtnnArchitecture::quadrant_circle(width)).to_report());
            Ok(ExitCode::SUCCESS)
        }
        Command::GenData { n, seed, out } => generate_synthetic(n, &mut Rng::new(seed))
            .and_then(|points| write_csv(&points, &out))
            .map(|()| ExitCode::SUCCESS)
            .map_err(Into::into),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
