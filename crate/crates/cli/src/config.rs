//! Flat `key = value` files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are the field names of [`RunConfig`]; omitted keys keep their
//! defaults and repeated keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use largo_core::train::RunConfig;

use crate::error::{io_err, CliError, CliResult};

/// One `key = value` line with its 1-based line number.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits text into entries, rejecting malformed lines and repeated keys.
pub fn parse_entries(text: &str, origin: &str) -> CliResult<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(CliError::Usage(format!("{origin}:{line}: expected `key = value`, got {body:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(CliError::Usage(format!("{origin}:{line}: missing key")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(CliError::Usage(format!(
                "{origin}:{line}: key {key:?} already set on line {}",
                prev.line
            )));
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

pub fn parse_config_str(text: &str, origin: &str) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut lines = Vec::new();
    for e in parse_entries(text, origin)? {
        cfg.set(&e.key, &e.value)
            .map_err(|err| CliError::Usage(format!("{origin}:{}: {}", e.line, strip_kind(&err))))?;
        lines.push((e.key, e.line));
    }
    if let Err((key, msg)) = cfg.validate() {
        let at = lines
            .iter()
            .find(|(k, _)| k == key)
            .map_or(String::new(), |(_, l)| format!(":{l}"));
        return Err(CliError::Usage(format!("{origin}{at}: invalid {key}: {msg}")));
    }
    Ok(cfg)
}

/// Reads and validates a run configuration file.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_config_str(&text, &path.display().to_string())
}

/// Every key with its resolved value, one per line.
pub fn render_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    for (k, v) in cfg.to_pairs() {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn strip_kind(e: &largo_core::Error) -> String {
    match e {
        largo_core::Error::Parameter(m) => m.clone(),
        other => other.to_string(),
    }
}
