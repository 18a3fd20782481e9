use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use largo_cli::commands::{self, SweepSource};
use largo_cli::grid::parse_seeds;
use largo_cli::CliError;

/// Constrained low-rank fine-tuning experiments on a synthetic domain-shift benchmark.
#[derive(Parser)]
#[command(name = "largo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark and train the base model.
    Pretrain {
        /// Benchmark and base-model spec file.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a pretrained checkpoint with one config.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint written by `pretrain`; its data.csv is read from the same directory.
        #[arg(long)]
        pretrained: PathBuf,
        /// Benchmark CSV to use instead of the one beside the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every config of a grid for every seed.
    Sweep {
        /// Config file whose values may be comma-separated lists.
        #[arg(long)]
        grid: PathBuf,
        /// Comma-separated seeds or an inclusive range `a..b`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        /// Share one pretrained model across seeds.
        #[arg(long, conflicts_with = "spec")]
        pretrained: Option<PathBuf>,
        /// Regenerate and pretrain per seed from this spec (the default, with default keys).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Check every analytic gradient against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize metrics CSVs.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Pretrain { spec, out } => commands::pretrain_cmd(&spec, &out),
        Command::Finetune {
            config,
            pretrained,
            data,
            out,
        } => commands::finetune_cmd(&config, &pretrained, data.as_deref(), &out),
        Command::Sweep {
            grid,
            seeds,
            out,
            pretrained,
            spec,
        } => {
            let seeds = parse_seeds(&seeds)?;
            let source = match &pretrained {
                Some(ckpt) => SweepSource::Pretrained { ckpt, data: None },
                None => SweepSource::Spec(spec.as_deref()),
            };
            commands::sweep_cmd(&grid, &seeds, source, &out, commands::sweep_threads()?)
        }
        Command::Gradcheck { trials, seed } => commands::gradcheck_cmd(trials, seed),
        Command::Report { csv } => commands::report_cmd(&csv),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("largo: {e}");
            e.exit_code()
        }
    }
}
