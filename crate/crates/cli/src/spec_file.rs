//! Pretraining spec files: benchmark generator keys plus base-model keys,
//! in the same flat format as run configs.
//!
//! `ood_domains` is a `;`-separated list of `name:angle:noise_std:mask`
//! entries and `hidden` a `,`-separated list of widths.

use std::fmt::Write as _;
use std::path::Path;

use largo_core::data::{ShiftDomain, ShiftSpec};
use largo_core::model::Activation;
use largo_core::train::{fmt_float, PretrainConfig};

use crate::config::parse_entries;
use crate::error::{io_err, CliError, CliResult};

pub const SPEC_KEYS: &[&str] = &[
    "classes",
    "input_dim",
    "informative_dim",
    "n_pretrain",
    "n_id_train",
    "n_id_val",
    "n_ood",
    "ood_domains",
    "id_fraction",
    "seed",
    "class_sep",
    "cluster_std",
    "pretrain_max_angle",
    "pretrain_max_noise",
    "pretrain_max_mask",
    "hidden",
    "activation",
    "pretrain_epochs",
    "pretrain_lr",
    "pretrain_batch_size",
    "pretrain_weight_decay",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn parse_domains(v: &str) -> Result<Vec<ShiftDomain>, String> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            if parts.len() != 4 || parts[0].is_empty() {
                return Err(format!("ood_domains: expected name:angle:noise:mask, got {item:?}"));
            }
            Ok(ShiftDomain::new(
                parts[0],
                num("ood_domains angle", parts[1])?,
                num("ood_domains noise", parts[2])?,
                num("ood_domains mask", parts[3])?,
            ))
        })
        .collect()
}

fn set(spec: &mut ShiftSpec, pre: &mut PretrainConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "classes" => spec.classes = num(key, v)?,
        "input_dim" => spec.input_dim = num(key, v)?,
        "informative_dim" => spec.informative_dim = num(key, v)?,
        "n_pretrain" => spec.n_pretrain = num(key, v)?,
        "n_id_train" => spec.n_id_train = num(key, v)?,
        "n_id_val" => spec.n_id_val = num(key, v)?,
        "n_ood" => spec.n_ood = num(key, v)?,
        "ood_domains" => spec.ood_domains = parse_domains(v)?,
        "id_fraction" => spec.id_fraction = num(key, v)?,
        "seed" => {
            spec.seed = num(key, v)?;
            pre.seed = spec.seed;
        }
        "class_sep" => spec.class_sep = num(key, v)?,
        "cluster_std" => spec.cluster_std = num(key, v)?,
        "pretrain_max_angle" => spec.pretrain_max_angle = num(key, v)?,
        "pretrain_max_noise" => spec.pretrain_max_noise = num(key, v)?,
        "pretrain_max_mask" => spec.pretrain_max_mask = num(key, v)?,
        "hidden" => {
            pre.hidden = v
                .split(',')
                .map(|w| num::<usize>(key, w.trim()))
                .collect::<Result<_, _>>()?
        }
        "activation" => {
            pre.activation = Activation::parse(v).ok_or_else(|| format!("activation: {v:?} is not one of tanh|relu"))?
        }
        "pretrain_epochs" => pre.epochs = num(key, v)?,
        "pretrain_lr" => pre.lr = num(key, v)?,
        "pretrain_batch_size" => pre.batch_size = num(key, v)?,
        "pretrain_weight_decay" => pre.weight_decay = num(key, v)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

pub fn parse_spec_str(text: &str, origin: &str) -> CliResult<(ShiftSpec, PretrainConfig)> {
    let mut spec = ShiftSpec::default();
    let mut pre = PretrainConfig::default();
    for e in parse_entries(text, origin)? {
        set(&mut spec, &mut pre, &e.key, &e.value)
            .map_err(|m| CliError::Usage(format!("{origin}:{}: {m}", e.line)))?;
    }
    spec.validate()
        .map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
    if pre.hidden.is_empty() || pre.hidden.contains(&0) {
        return Err(CliError::Usage(format!("{origin}: hidden widths must be positive")));
    }
    Ok((spec, pre))
}

pub fn parse_spec(path: &Path) -> CliResult<(ShiftSpec, PretrainConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_spec_str(&text, &path.display().to_string())
}

pub fn render_spec(spec: &ShiftSpec, pre: &PretrainConfig) -> String {
    let f = fmt_float;
    let domains: Vec<String> = spec
        .ood_domains
        .iter()
        .map(|d| format!("{}:{}:{}:{}", d.name, f(d.angle), f(d.noise_std), f(d.mask_fraction)))
        .collect();
    let hidden: Vec<String> = pre.hidden.iter().map(usize::to_string).collect();
    let pairs = [
        ("classes", spec.classes.to_string()),
        ("input_dim", spec.input_dim.to_string()),
        ("informative_dim", spec.informative_dim.to_string()),
        ("n_pretrain", spec.n_pretrain.to_string()),
        ("n_id_train", spec.n_id_train.to_string()),
        ("n_id_val", spec.n_id_val.to_string()),
        ("n_ood", spec.n_ood.to_string()),
        ("ood_domains", domains.join("; ")),
        ("id_fraction", f(spec.id_fraction)),
        ("seed", spec.seed.to_string()),
        ("class_sep", f(spec.class_sep)),
        ("cluster_std", f(spec.cluster_std)),
        ("pretrain_max_angle", f(spec.pretrain_max_angle)),
        ("pretrain_max_noise", f(spec.pretrain_max_noise)),
        ("pretrain_max_mask", f(spec.pretrain_max_mask)),
        ("hidden", hidden.join(",")),
        ("activation", pre.activation.as_str().to_string()),
        ("pretrain_epochs", pre.epochs.to_string()),
        ("pretrain_lr", f(pre.lr)),
        ("pretrain_batch_size", pre.batch_size.to_string()),
        ("pretrain_weight_decay", f(pre.weight_decay)),
    ];
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}
