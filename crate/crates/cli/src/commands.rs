//! The subcommands, callable without going through argument parsing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use largo_core::data::{generate, read_bundle_csv, write_bundle_csv, DatasetBundle};
use largo_core::gradcheck;
use largo_core::model::checkpoint;
use largo_core::model::ModelState;
use largo_core::train::{pretrain, run_id, sweep, train_run, DataSource, RunConfig};

use crate::config::{parse_config, render_config, write_text};
use crate::error::{io_err, CliError, CliResult};
use crate::grid::parse_grid;
use crate::metrics_csv::{emit_csv, read_csv};
use crate::report::summarize;
use crate::spec_file::{parse_spec, render_spec};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DATA_FILE: &str = "data.csv";
pub const METRICS_FILE: &str = "metrics.csv";

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Worker count for sweeps: `LARGO_THREADS` if set, else the machine's
/// available parallelism.
pub fn sweep_threads() -> CliResult<usize> {
    match std::env::var("LARGO_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("LARGO_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Generates the benchmark, trains the base model and writes
/// `model.ckpt`, `data.csv` and the resolved `spec.txt` into `out`.
pub fn pretrain_cmd(spec_path: &Path, out: &Path) -> CliResult<String> {
    let (spec, pcfg) = parse_spec(spec_path)?;
    ensure_dir(out)?;
    write_text(&out.join("spec.txt"), &render_spec(&spec, &pcfg))?;
    let bundle = generate(&spec)?;
    let model = pretrain(&pcfg, &bundle.pretrain, spec.classes)?;
    write_bundle_csv(&bundle, &out.join(DATA_FILE))?;
    checkpoint::save(&model, "pretrained", &out.join(CHECKPOINT_FILE))?;
    let mut msg = format!("pretrained {:?}", model.layer_dims());
    let _ = write!(msg, " id_val {:.4}", model.accuracy(&bundle.id_val)?);
    for (name, b) in &bundle.ood {
        let _ = write!(msg, " {name} {:.4}", model.accuracy(b)?);
    }
    Ok(msg)
}

/// Loads a checkpoint and the `data.csv` stored beside it (or `data`).
pub fn load_pretrained(ckpt: &Path, data: Option<&Path>) -> CliResult<(DatasetBundle, ModelState)> {
    let (model, _) = checkpoint::load(ckpt)?;
    let data_path: PathBuf = match data {
        Some(p) => p.to_path_buf(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join(DATA_FILE),
    };
    Ok((read_bundle_csv(&data_path)?, model))
}

pub fn finetune_cmd(config: &Path, ckpt: &Path, data: Option<&Path>, out: &Path) -> CliResult<String> {
    let cfg = parse_config(config)?;
    ensure_dir(out)?;
    write_text(&out.join("config.txt"), &render_config(&cfg))?;
    let (bundle, model) = load_pretrained(ckpt, data)?;
    let outcome = train_run(&cfg, &bundle, &model)?;
    emit_csv(&outcome.rows, &out.join(METRICS_FILE))?;
    checkpoint::save(&outcome.model, cfg.method.as_str(), &out.join(CHECKPOINT_FILE))?;
    Ok(summarize(&outcome.rows)?.to_string())
}

pub enum SweepSource<'a> {
    Pretrained { ckpt: &'a Path, data: Option<&'a Path> },
    Spec(Option<&'a Path>),
}

pub fn sweep_cmd(grid_path: &Path, seeds: &[u64], source: SweepSource, out: &Path, threads: usize) -> CliResult<String> {
    let grid = parse_grid(grid_path)?;
    ensure_dir(out)?;
    let source = match source {
        SweepSource::Pretrained { ckpt, data } => {
            let (bundle, pretrained) = load_pretrained(ckpt, data)?;
            DataSource::Fixed { bundle, pretrained }
        }
        SweepSource::Spec(path) => {
            let (spec, pretrain) = match path {
                Some(p) => parse_spec(p)?,
                None => crate::spec_file::parse_spec_str("", "defaults")?,
            };
            write_text(&out.join("spec.txt"), &render_spec(&spec, &pretrain))?;
            DataSource::PerSeed { spec, pretrain }
        }
    };
    let mut listing = String::new();
    for cfg in &grid {
        for &seed in seeds {
            let c = RunConfig { seed, ..cfg.clone() };
            let _ = writeln!(listing, "[{}]\n{}", run_id(&c), render_config(&c));
        }
    }
    write_text(&out.join("runs.txt"), &listing)?;
    let rows = sweep(&grid, &source, seeds, threads)?;
    emit_csv(&rows, &out.join(METRICS_FILE))?;
    Ok(summarize(&rows)?.to_string())
}

pub fn gradcheck_cmd(trials: usize, seed: u64) -> CliResult<String> {
    let report = gradcheck::run_suite(trials, seed)?;
    let worst = report
        .worst()
        .ok_or_else(|| CliError::Usage("gradcheck needs at least one trial".into()))?;
    let line = format!(
        "{} checks, worst {} (trial {}) relative error {:.3e}, tolerance {:.0e}",
        report.checks.len(),
        worst.name,
        worst.trial,
        worst.rel_err,
        gradcheck::TOLERANCE
    );
    if report.passed(gradcheck::TOLERANCE) {
        Ok(format!("ok: {line}"))
    } else {
        Err(CliError::Numeric(format!("FAILED: {line}")))
    }
}

pub fn report_cmd(paths: &[PathBuf]) -> CliResult<String> {
    if paths.is_empty() {
        return Err(CliError::Usage("report needs at least one csv".into()));
    }
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_csv(p)?);
    }
    Ok(summarize(&rows)?.to_string())
}
