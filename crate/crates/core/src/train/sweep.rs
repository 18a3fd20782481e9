use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{run_method, MetricsRow, PretrainConfig, RunConfig};
use crate::data::{generate, DatasetBundle, ShiftSpec};
use crate::error::{Error, Result};
use crate::model::ModelState;

use super::pretrain::pretrain;

/// Where a sweep gets its benchmark and base model.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// One bundle and pretrained model shared by every run.
    Fixed {
        bundle: DatasetBundle,
        pretrained: ModelState,
    },
    /// Each seed regenerates the benchmark with that seed and pretrains on it.
    PerSeed {
        spec: ShiftSpec,
        pretrain: PretrainConfig,
    },
}

/// `{method}-{8 hex digits of the config hash}-s{seed}`; the hash covers every
/// key except the seed.
pub fn run_id(cfg: &RunConfig) -> String {
    let mut h = Sha256::new();
    for (k, v) in cfg.to_pairs() {
        if k != "seed" {
            h.update(format!("{k}={v}\n").as_bytes());
        }
    }
    let digest = h.finalize();
    let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{hex}-s{}", cfg.method, cfg.seed)
}

fn materialize(source: &DataSource, seed: u64) -> Result<(DatasetBundle, ModelState)> {
    match source {
        DataSource::Fixed { bundle, pretrained } => Ok((bundle.clone(), pretrained.clone())),
        DataSource::PerSeed { spec, pretrain: pcfg } => {
            let spec = ShiftSpec { seed, ..spec.clone() };
            let bundle = generate(&spec)?;
            let pcfg = PretrainConfig { seed, ..pcfg.clone() };
            let model = pretrain(&pcfg, &bundle.pretrain, spec.classes)?;
            Ok((bundle, model))
        }
    }
}

/// Runs every config for every seed on a pool of `threads` workers and
/// returns all rows ordered by run id.
pub fn sweep(grid: &[RunConfig], source: &DataSource, seeds: &[u64], threads: usize) -> Result<Vec<MetricsRow>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::param("sweep needs at least one config and one seed"));
    }
    let mut jobs: Vec<RunConfig> = Vec::with_capacity(grid.len() * seeds.len());
    for cfg in grid {
        for &seed in seeds {
            jobs.push(RunConfig { seed, ..cfg.clone() });
        }
    }
    let mut ids: Vec<String> = jobs.iter().map(run_id).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::param(format!("duplicate run {}", w[0])));
    }
    jobs.sort_by_cached_key(run_id);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut unique: Vec<u64> = seeds.to_vec();
        unique.sort_unstable();
        unique.dedup();
        let sources: Vec<(u64, (DatasetBundle, ModelState))> = unique
            .par_iter()
            .map(|&s| materialize(source, s).map(|d| (s, d)))
            .collect::<Result<_>>()?;
        let per_run: Vec<Vec<MetricsRow>> = jobs
            .par_iter()
            .map(|cfg| {
                let (_, (bundle, model)) = sources
                    .iter()
                    .find(|(s, _)| *s == cfg.seed)
                    .expect("every seed materialized");
                run_method(cfg, bundle, model).map_err(|e| Error::Run {
                    run_id: run_id(cfg),
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        Ok(per_run.into_iter().flatten().collect())
    })
}
