//! Sweep grids: a config file whose values may be `,`-separated lists.
//! The grid is the cartesian product of all lists, with the last key
//! varying fastest.

use std::path::Path;

use largo_core::train::RunConfig;

use crate::config::parse_entries;
use crate::error::{io_err, CliError, CliResult};

pub fn parse_grid_str(text: &str, origin: &str) -> CliResult<Vec<RunConfig>> {
    let entries = parse_entries(text, origin)?;
    let mut grid = vec![RunConfig::default()];
    for e in &entries {
        if e.key == "seed" {
            return Err(CliError::Usage(format!(
                "{origin}:{}: seeds are given with --seeds, not in the grid",
                e.line
            )));
        }
        let values: Vec<&str> = e.value.split(',').map(str::trim).collect();
        let mut next = Vec::with_capacity(grid.len() * values.len());
        for base in &grid {
            for v in &values {
                let mut cfg = base.clone();
                cfg.set(&e.key, v)
                    .map_err(|err| CliError::Usage(format!("{origin}:{}: {err}", e.line)))?;
                next.push(cfg);
            }
        }
        grid = next;
    }
    for cfg in &grid {
        if let Err((key, msg)) = cfg.validate() {
            let line = entries.iter().find(|e| e.key == key).map_or(0, |e| e.line);
            return Err(CliError::Usage(format!("{origin}:{line}: invalid {key}: {msg}")));
        }
    }
    Ok(grid)
}

pub fn parse_grid(path: &Path) -> CliResult<Vec<RunConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_grid_str(&text, &path.display().to_string())
}

/// `0,1,2` or an inclusive range `0..9`.
pub fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::Usage(format!("--seeds: cannot parse {s:?}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let seeds: Vec<u64> = s
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}
