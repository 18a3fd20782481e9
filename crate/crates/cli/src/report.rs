//! Summaries of metrics tables: one line per configuration, aggregating the
//! final-epoch rows of all its seeds.

use std::collections::BTreeMap;
use std::fmt;

use largo_core::train::MetricsRow;

use crate::error::{CliError, CliResult};

/// Sample mean and, for two or more values, sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Stat { mean, std, n }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(4);
        match self.std {
            Some(s) => write!(f, "{:.p$} ± {:.p$}", self.mean, s),
            None => write!(f, "{:.p$}", self.mean),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    /// Run id with the seed suffix removed.
    pub config: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub id_accuracy: Stat,
    pub ood: Vec<(String, Stat)>,
    pub ood_avg: Stat,
    pub delta_l1: Stat,
    pub trainable_params: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
}

fn config_of(run_id: &str) -> &str {
    match run_id.rfind("-s") {
        Some(p) if run_id[p + 2..].chars().all(|c| c.is_ascii_digit()) => &run_id[..p],
        _ => run_id,
    }
}

/// Non-OOD split names.
const ID_SPLITS: [&str; 2] = ["id_train", "id_val"];

pub fn summarize(rows: &[MetricsRow]) -> CliResult<Summary> {
    // run_id -> rows of its final epoch
    let mut last: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let slot = last.entry(&r.run_id).or_default();
        match slot.first().map(|x| x.epoch) {
            Some(e) if e > r.epoch => {}
            Some(e) if e == r.epoch => slot.push(r),
            _ => *slot = vec![r],
        }
    }
    let mut by_config: BTreeMap<&str, Vec<Vec<&MetricsRow>>> = BTreeMap::new();
    for (run_id, final_rows) in last {
        by_config.entry(config_of(run_id)).or_default().push(final_rows);
    }

    let mut groups = Vec::new();
    for (config, runs) in by_config {
        let mut id = Vec::new();
        let mut delta = Vec::new();
        let mut params = Vec::new();
        let mut ood_avg = Vec::new();
        let mut per_domain: Vec<(String, Vec<f64>)> = Vec::new();
        let mut seeds = Vec::new();
        for run in &runs {
            let first = run[0];
            seeds.push(first.seed);
            let id_row = run.iter().find(|r| r.split_name == "id_val").ok_or_else(|| {
                CliError::Io(format!("run {}: no id_val row in its final epoch", first.run_id))
            })?;
            id.push(id_row.accuracy);
            delta.push(first.delta_l1);
            params.push(first.trainable_params as f64);
            let oods: Vec<&&MetricsRow> = run
                .iter()
                .filter(|r| !ID_SPLITS.contains(&r.split_name.as_str()))
                .collect();
            if !oods.is_empty() {
                ood_avg.push(oods.iter().map(|r| r.accuracy).sum::<f64>() / oods.len() as f64);
            }
            for r in oods {
                match per_domain.iter_mut().find(|(n, _)| *n == r.split_name) {
                    Some((_, v)) => v.push(r.accuracy),
                    None => per_domain.push((r.split_name.clone(), vec![r.accuracy])),
                }
            }
        }
        groups.push(GroupSummary {
            config: config.to_string(),
            method: runs[0][0].method.clone(),
            seeds,
            id_accuracy: Stat::of(&id),
            ood: per_domain.into_iter().map(|(n, v)| (n, Stat::of(&v))).collect(),
            ood_avg: if ood_avg.is_empty() {
                Stat { mean: f64::NAN, std: None, n: 0 }
            } else {
                Stat::of(&ood_avg)
            },
            delta_l1: Stat::of(&delta),
            trainable_params: Stat::of(&params),
        });
    }
    Ok(Summary { groups })
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            write!(
                f,
                "{} [{} seed{}] id {}",
                g.config,
                g.seeds.len(),
                if g.seeds.len() == 1 { "" } else { "s" },
                g.id_accuracy
            )?;
            for (name, s) in &g.ood {
                write!(f, " | {name} {s}")?;
            }
            writeln!(
                f,
                " | ood_avg {} | delta_l1 {:.4e} | params {:.0}",
                g.ood_avg, g.delta_l1.mean, g.trainable_params.mean
            )?;
        }
        Ok(())
    }
}
