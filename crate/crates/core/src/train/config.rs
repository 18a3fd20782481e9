use crate::error::{Error, Result};
use crate::largo::FactorGradMode;
use crate::linalg::{NormMode, SvdNormMode};

macro_rules! str_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($text => Some($name::$variant),)+ _ => None }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

str_enum!(
    /// Fine-tuning method.
    Method {
        VanillaFt => "vanilla_ft",
        LinearProbe => "linear_probe",
        Lora => "lora",
        Tpgm => "tpgm",
        TpgmLora => "tpgm_lora",
        Largo => "largo",
    }
);

impl Method {
    pub fn is_low_rank(self) -> bool {
        matches!(self, Method::Lora | Method::TpgmLora | Method::Largo)
    }

    pub fn uses_radius(self) -> bool {
        matches!(self, Method::Tpgm | Method::TpgmLora | Method::Largo)
    }
}

str_enum!(Schedule { Constant => "constant", Cosine => "cosine" });
str_enum!(
    /// Adapter initialization; `auto` picks svd for largo and kaiming otherwise.
    InitMode { Auto => "auto", Kaiming => "kaiming", Svd => "svd" }
);
str_enum!(
    /// Data used for radius updates.
    GammaBatch { Train => "train", Val => "val" }
);
str_enum!(
    /// How often the regulated adapters update their radii.
    GammaEvery { Step => "step", Epoch => "epoch" }
);

fn parse_norm(s: &str) -> Option<NormMode> {
    match s {
        "entrywise" => Some(NormMode::Entrywise),
        "mars_row_sum" => Some(NormMode::MarsRowSum),
        _ => None,
    }
}

fn parse_svd_norm(s: &str) -> Option<SvdNormMode> {
    match s {
        "vector_l2" => Some(SvdNormMode::VectorL2),
        "spectral" => Some(SvdNormMode::Spectral),
        _ => None,
    }
}

fn parse_factor_mode(s: &str) -> Option<FactorGradMode> {
    match s {
        "regulated" => Some(FactorGradMode::Regulated),
        "plain" => Some(FactorGradMode::Plain),
        "exact" => Some(FactorGradMode::Exact),
        _ => None,
    }
}

/// Everything that determines one fine-tuning run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub rank: usize,
    pub gamma_init: f64,
    pub gamma_lr: f64,
    pub svd_scalar: f64,
    pub init: InitMode,
    pub norm_mode: NormMode,
    pub svd_norm_mode: SvdNormMode,
    pub factor_grad_mode: FactorGradMode,
    pub gamma_batch: GammaBatch,
    pub gamma_every: GammaEvery,
    pub clamp_shrink_only: bool,
    pub seed: u64,
    pub id_fraction: f64,
    /// Share of the ID training split held out for radius updates.
    pub val_fraction: f64,
    pub record_wall_ms: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Largo,
            lr: 0.2,
            weight_decay: 5e-3,
            epochs: 50,
            batch_size: 64,
            schedule: Schedule::Cosine,
            rank: 16,
            gamma_init: 1e-4,
            gamma_lr: 1.0,
            svd_scalar: 0.5,
            init: InitMode::Auto,
            norm_mode: NormMode::Entrywise,
            svd_norm_mode: SvdNormMode::VectorL2,
            factor_grad_mode: FactorGradMode::Regulated,
            gamma_batch: GammaBatch::Train,
            gamma_every: GammaEvery::Epoch,
            clamp_shrink_only: false,
            seed: 0,
            id_fraction: 1.0,
            val_fraction: 0.1,
            record_wall_ms: false,
        }
    }
}

/// Every recognised configuration key, in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "method",
    "lr",
    "weight_decay",
    "epochs",
    "batch_size",
    "schedule",
    "rank",
    "gamma_init",
    "gamma_lr",
    "svd_scalar",
    "init",
    "norm_mode",
    "svd_norm_mode",
    "factor_grad_mode",
    "gamma_batch",
    "gamma_every",
    "clamp_shrink_only",
    "seed",
    "id_fraction",
    "val_fraction",
    "record_wall_ms",
];

/// Shortest round-trip decimal form of a float.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

impl RunConfig {
    /// Assigns one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::param(format!("{key}: cannot parse {v:?}")))
        }
        fn pick<T>(key: &str, v: &str, parsed: Option<T>, choices: &str) -> Result<T> {
            parsed.ok_or_else(|| Error::param(format!("{key}: {v:?} is not one of {choices}")))
        }
        match key {
            "method" => {
                self.method = pick(
                    key,
                    value,
                    Method::parse(value),
                    "vanilla_ft|linear_probe|lora|tpgm|tpgm_lora|largo",
                )?
            }
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "schedule" => self.schedule = pick(key, value, Schedule::parse(value), "constant|cosine")?,
            "rank" => self.rank = num(key, value)?,
            "gamma_init" => self.gamma_init = num(key, value)?,
            "gamma_lr" => self.gamma_lr = num(key, value)?,
            "svd_scalar" => self.svd_scalar = num(key, value)?,
            "init" => self.init = pick(key, value, InitMode::parse(value), "auto|kaiming|svd")?,
            "norm_mode" => {
                self.norm_mode = pick(key, value, parse_norm(value), "entrywise|mars_row_sum")?
            }
            "svd_norm_mode" => {
                self.svd_norm_mode = pick(key, value, parse_svd_norm(value), "vector_l2|spectral")?
            }
            "factor_grad_mode" => {
                self.factor_grad_mode =
                    pick(key, value, parse_factor_mode(value), "regulated|plain|exact")?
            }
            "gamma_batch" => {
                self.gamma_batch = pick(key, value, GammaBatch::parse(value), "train|val")?
            }
            "gamma_every" => {
                self.gamma_every = pick(key, value, GammaEvery::parse(value), "step|epoch")?
            }
            "clamp_shrink_only" => self.clamp_shrink_only = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "id_fraction" => self.id_fraction = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "record_wall_ms" => self.record_wall_ms = num(key, value)?,
            _ => return Err(Error::param(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs in [`CONFIG_KEYS`] order; feeding them back
    /// through [`RunConfig::set`] reproduces `self`.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let f = fmt_float;
        vec![
            ("method", self.method.to_string()),
            ("lr", f(self.lr)),
            ("weight_decay", f(self.weight_decay)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("schedule", self.schedule.to_string()),
            ("rank", self.rank.to_string()),
            ("gamma_init", f(self.gamma_init)),
            ("gamma_lr", f(self.gamma_lr)),
            ("svd_scalar", f(self.svd_scalar)),
            ("init", self.init.to_string()),
            ("norm_mode", self.norm_mode.as_str().to_string()),
            ("svd_norm_mode", self.svd_norm_mode.as_str().to_string()),
            ("factor_grad_mode", self.factor_grad_mode.as_str().to_string()),
            ("gamma_batch", self.gamma_batch.to_string()),
            ("gamma_every", self.gamma_every.to_string()),
            ("clamp_shrink_only", self.clamp_shrink_only.to_string()),
            ("seed", self.seed.to_string()),
            ("id_fraction", f(self.id_fraction)),
            ("val_fraction", f(self.val_fraction)),
            ("record_wall_ms", self.record_wall_ms.to_string()),
        ]
    }

    /// Checks value ranges; returns the offending key with the message.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let err = |k: &'static str, m: String| Err((k, m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return err("lr", format!("must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return err("weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be >= 1".into());
        }
        if !(self.id_fraction > 0.0 && self.id_fraction <= 1.0) {
            return err("id_fraction", format!("must lie in (0, 1], got {}", self.id_fraction));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return err("val_fraction", format!("must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.method.is_low_rank() {
            if self.rank == 0 {
                return err("rank", "must be >= 1 for low-rank methods".into());
            }
            if self.resolved_init() == InitMode::Svd && !(self.svd_scalar > 0.0) {
                return err("svd_scalar", format!("must be > 0, got {}", self.svd_scalar));
            }
        }
        if self.method.uses_radius() {
            if !(self.gamma_init > 0.0) || !self.gamma_init.is_finite() {
                return err("gamma_init", format!("must be > 0, got {}", self.gamma_init));
            }
            if !(self.gamma_lr >= 0.0) {
                return err("gamma_lr", format!("must be >= 0, got {}", self.gamma_lr));
            }
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        self.validate()
            .map_err(|(k, m)| Error::param(format!("{k}: {m}")))
    }

    /// The init mode after resolving `auto` for this method.
    pub fn resolved_init(&self) -> InitMode {
        match (self.init, self.method) {
            (InitMode::Auto, Method::Largo) => InitMode::Svd,
            (InitMode::Auto, _) => InitMode::Kaiming,
            (m, _) => m,
        }
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => cosine_lr(self.lr, epoch, self.epochs),
        }
    }
}

/// `lr·½(1 + cos(π·epoch/epochs))`.
pub fn cosine_lr(lr: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return lr;
    }
    let t = epoch as f64 / epochs as f64;
    lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
