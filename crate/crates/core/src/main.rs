use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regnde_core::cli::{render_curves, run_experiment, CliError, ExperimentConfig};

/// Train regularized neural ODEs/SDEs from config files and plot their learning curves.
#[derive(Parser)]
#[command(name = "regnde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one experiment, writing metrics and parameters.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Draw NFE and accuracy/loss curves from one or more metrics.csv files.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a config without running it.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Replace the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the training subset size.
    #[arg(long)]
    subset: Option<usize>,
    /// Replace the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn load(path: &PathBuf, o: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = o.seed {
        config.train.seed = seed;
    }
    if let Some(subset) = o.subset {
        config.train.train_subset = Some(subset);
    }
    if let Some(dir) = &o.out_dir {
        config.output_dir = dir.clone();
    }
    config.train.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => load(&config, &overrides).and_then(|c| {
            let artifacts = run_experiment(&c, |m| {
                let acc = m.accuracy.map_or(String::new(), |a| format!(" accuracy {:.4}", a));
                eprintln!(
                    "epoch {:>4} loss {:.6}{acc} nfe {:.1} ({:.1}s)",
                    m.epoch, m.task_loss, m.mean_nfe, m.wall_seconds
                );
            })?;
            println!("{}", artifacts.output_dir.display());
            Ok(())
        }),
        Command::Plot { csv, out } => render_curves(&csv, &out),
        Command::Validate { config, overrides } => load(&config, &overrides).map(|c| {
            println!("ok {} {} (config hash {})", c.train.experiment, c.train.regularization, c.hash());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
