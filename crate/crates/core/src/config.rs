//! Experiment configuration: presets, the `key = value` file format, and validation.
//!
//! Values are layered: preset defaults, then the config file, then explicit
//! overrides. The file format is one `key = value` pair per line with `#`
//! comments; ablation switches use dotted keys such as `ablation.recon_mode`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Two-domain face translation at 256x256 with one extra resampling block.
    Face,
    /// Three-domain animal translation at 256x256.
    Animal,
    /// Tiny networks at 32x32 for tests and desk-scale experiments.
    Toy,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Face, Preset::Animal, Preset::Toy];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Face => "face",
            Preset::Animal => "animal",
            Preset::Toy => "toy",
        }
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "face" => Ok(Preset::Face),
            "animal" => Ok(Preset::Animal),
            "toy" => Ok(Preset::Toy),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which discriminator output layout to train with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiscriminatorHead {
    /// One real/fake logit per domain.
    Multitask,
    /// A single real/fake logit plus a K-way domain classifier.
    Acgan,
}

/// How the generator receives its conditioning code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Conditioning {
    Adain,
    /// Code broadcast as extra input channels; no AdaIN layers.
    Concat,
}

/// What the generator is conditioned on and which reconstruction loss applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReconMode {
    /// Domain-specific style codes from the mapping network or style encoder.
    Style,
    /// Raw latent plus a domain one-hot, with a latent reconstruction loss.
    Latent,
    /// Domain one-hot only: a deterministic single-output translator.
    None,
}

macro_rules! keyword_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }

            fn parse(key: &'static str, value: &str) -> Result<Self, ConfigError> {
                match value {
                    $($name => Ok($variant),)+
                    other => Err(ConfigError::Value {
                        key: key.to_string(),
                        message: format!(
                            "`{other}` is not one of {}",
                            [$($name),+].join(", ")
                        ),
                    }),
                }
            }
        }
    };
}

keyword_enum!(DiscriminatorHead {
    DiscriminatorHead::Multitask => "multitask",
    DiscriminatorHead::Acgan => "acgan",
});
keyword_enum!(Conditioning {
    Conditioning::Adain => "adain",
    Conditioning::Concat => "concat",
});
keyword_enum!(ReconMode {
    ReconMode::Style => "style",
    ReconMode::Latent => "latent",
    ReconMode::None => "none",
});

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub discriminator_head: DiscriminatorHead,
    pub conditioning: Conditioning,
    pub recon_mode: ReconMode,
    pub use_ds: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            discriminator_head: DiscriminatorHead::Multitask,
            conditioning: Conditioning::Adain,
            recon_mode: ReconMode::Style,
            use_ds: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub image_size: usize,
    pub num_domains: usize,
    pub latent_dim: usize,
    pub style_dim: usize,
    pub hidden_dim: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Downsampling blocks in the generator (mirrored by as many upsampling blocks).
    pub resample_blocks: usize,
    pub lambda_sty: f64,
    pub lambda_ds: f64,
    pub lambda_cyc: f64,
    pub r1_gamma: f64,
    pub batch_size: usize,
    pub total_iters: usize,
    pub ds_decay_iters: usize,
    pub lr_gde: f64,
    pub lr_f: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// Draw training target domains from the K-1 domains other than the source.
    pub target_excludes_source: bool,
    pub ablation: Ablation,
}

/// Every key accepted by the config file, in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "image_size",
    "num_domains",
    "latent_dim",
    "style_dim",
    "hidden_dim",
    "base_channels",
    "max_channels",
    "resample_blocks",
    "lambda_sty",
    "lambda_ds",
    "lambda_cyc",
    "r1_gamma",
    "batch_size",
    "total_iters",
    "ds_decay_iters",
    "lr_gde",
    "lr_f",
    "adam_beta1",
    "adam_beta2",
    "ema_decay",
    "seed",
    "target_excludes_source",
    "ablation.discriminator_head",
    "ablation.conditioning",
    "ablation.recon_mode",
    "ablation.use_ds",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub key: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (expected face, animal or toy)")]
    UnknownPreset(String),

    #[error("config file not found: {0}")]
    Missing(PathBuf),

    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },

    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },

    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    /// The configuration key this error is about, when there is exactly one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key } | ConfigError::Value { key, .. } => Some(key),
            ConfigError::Invalid(v) if v.len() == 1 => Some(v[0].key),
            _ => None,
        }
    }
}

pub fn default_config(preset: Preset) -> ExperimentConfig {
    let paper = ExperimentConfig {
        image_size: 256,
        num_domains: 2,
        latent_dim: 16,
        style_dim: 64,
        hidden_dim: 512,
        base_channels: 64,
        max_channels: 512,
        resample_blocks: 4,
        lambda_sty: 1.0,
        lambda_ds: 1.0,
        lambda_cyc: 1.0,
        r1_gamma: 1.0,
        batch_size: 8,
        total_iters: 100_000,
        ds_decay_iters: 100_000,
        lr_gde: 1e-4,
        lr_f: 1e-6,
        adam_beta1: 0.0,
        adam_beta2: 0.99,
        ema_decay: 0.999,
        seed: 777,
        target_excludes_source: false,
        ablation: Ablation::default(),
    };
    match preset {
        Preset::Face => ExperimentConfig {
            resample_blocks: 5,
            ..paper
        },
        Preset::Animal => ExperimentConfig {
            num_domains: 3,
            lambda_ds: 2.0,
            ..paper
        },
        Preset::Toy => ExperimentConfig {
            image_size: 32,
            num_domains: 2,
            hidden_dim: 128,
            base_channels: 16,
            max_channels: 64,
            batch_size: 4,
            total_iters: 500,
            ds_decay_iters: 500,
            ema_decay: 0.99,
            ..paper
        },
    }
}

fn parse_count(key: &'static str, value: &str) -> Result<usize, ConfigError> {
    match value.parse::<i64>() {
        Ok(v) if v >= 0 => Ok(v as usize),
        Ok(v) => Err(ConfigError::Invalid(vec![Violation {
            key,
            message: format!("must be a non-negative integer, got {v}"),
        }])),
        Err(_) => Err(ConfigError::Value {
            key: key.to_string(),
            message: format!("`{value}` is not an integer"),
        }),
    }
}

fn parse_real(key: &'static str, value: &str) -> Result<f64, ConfigError> {
    value.parse::<f64>().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        message: format!("`{value}` is not a number"),
    })
}

fn parse_bool(key: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ConfigError::Value {
            key: key.to_string(),
            message: format!("`{other}` is not true or false"),
        }),
    }
}

impl ExperimentConfig {
    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let key: &'static str = CONFIG_KEYS
            .iter()
            .copied()
            .find(|k| *k == key.trim())
            .ok_or_else(|| ConfigError::UnknownKey {
                key: key.trim().to_string(),
            })?;
        match key {
            "image_size" => self.image_size = parse_count(key, value)?,
            "num_domains" => self.num_domains = parse_count(key, value)?,
            "latent_dim" => self.latent_dim = parse_count(key, value)?,
            "style_dim" => self.style_dim = parse_count(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_count(key, value)?,
            "base_channels" => self.base_channels = parse_count(key, value)?,
            "max_channels" => self.max_channels = parse_count(key, value)?,
            "resample_blocks" => self.resample_blocks = parse_count(key, value)?,
            "lambda_sty" => self.lambda_sty = parse_real(key, value)?,
            "lambda_ds" => self.lambda_ds = parse_real(key, value)?,
            "lambda_cyc" => self.lambda_cyc = parse_real(key, value)?,
            "r1_gamma" => self.r1_gamma = parse_real(key, value)?,
            "batch_size" => self.batch_size = parse_count(key, value)?,
            "total_iters" => self.total_iters = parse_count(key, value)?,
            "ds_decay_iters" => self.ds_decay_iters = parse_count(key, value)?,
            "lr_gde" => self.lr_gde = parse_real(key, value)?,
            "lr_f" => self.lr_f = parse_real(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_real(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_real(key, value)?,
            "ema_decay" => self.ema_decay = parse_real(key, value)?,
            "seed" => {
                self.seed = value.parse().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    message: format!("`{value}` is not an unsigned integer"),
                })?
            }
            "target_excludes_source" => self.target_excludes_source = parse_bool(key, value)?,
            "ablation.discriminator_head" => {
                self.ablation.discriminator_head = DiscriminatorHead::parse(key, value)?
            }
            "ablation.conditioning" => self.ablation.conditioning = Conditioning::parse(key, value)?,
            "ablation.recon_mode" => self.ablation.recon_mode = ReconMode::parse(key, value)?,
            "ablation.use_ds" => self.ablation.use_ds = parse_bool(key, value)?,
            _ => unreachable!("key list and match arms out of sync: {key}"),
        }
        Ok(())
    }

    /// Textual value of one field, in the same form `set` accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "image_size" => self.image_size.to_string(),
            "num_domains" => self.num_domains.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "style_dim" => self.style_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "base_channels" => self.base_channels.to_string(),
            "max_channels" => self.max_channels.to_string(),
            "resample_blocks" => self.resample_blocks.to_string(),
            "lambda_sty" => self.lambda_sty.to_string(),
            "lambda_ds" => self.lambda_ds.to_string(),
            "lambda_cyc" => self.lambda_cyc.to_string(),
            "r1_gamma" => self.r1_gamma.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "total_iters" => self.total_iters.to_string(),
            "ds_decay_iters" => self.ds_decay_iters.to_string(),
            "lr_gde" => self.lr_gde.to_string(),
            "lr_f" => self.lr_f.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "ema_decay" => self.ema_decay.to_string(),
            "seed" => self.seed.to_string(),
            "target_excludes_source" => self.target_excludes_source.to_string(),
            "ablation.discriminator_head" => self.ablation.discriminator_head.name().to_string(),
            "ablation.conditioning" => self.ablation.conditioning.name().to_string(),
            "ablation.recon_mode" => self.ablation.recon_mode.name().to_string(),
            "ablation.use_ds" => self.ablation.use_ds.to_string(),
            _ => return None,
        })
    }

    /// Layer `key = value` lines from `text` over `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (index, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: index + 1,
                text: raw.to_string(),
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Render every key in the config file format.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("every listed key has a value"));
            out.push('\n');
        }
        out
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut check = |ok: bool, key: &'static str, message: String| {
            if !ok {
                v.push(Violation { key, message });
            }
        };
        for (key, value) in [
            ("latent_dim", self.latent_dim),
            ("style_dim", self.style_dim),
            ("hidden_dim", self.hidden_dim),
            ("base_channels", self.base_channels),
            ("resample_blocks", self.resample_blocks),
            ("batch_size", self.batch_size),
            ("total_iters", self.total_iters),
            ("ds_decay_iters", self.ds_decay_iters),
        ] {
            check(value >= 1, key, format!("must be at least 1, got {value}"));
        }
        check(
            self.num_domains >= 2,
            "num_domains",
            format!("must be at least 2, got {}", self.num_domains),
        );
        check(
            self.max_channels >= self.base_channels,
            "max_channels",
            format!(
                "must be at least base_channels ({}), got {}",
                self.base_channels, self.max_channels
            ),
        );
        let factor = 1usize.checked_shl(self.resample_blocks as u32).unwrap_or(0);
        check(
            self.image_size > 0 && factor > 0 && self.image_size % factor == 0,
            "image_size",
            format!(
                "must be a positive multiple of 2^{} = {}, got {}",
                self.resample_blocks, factor, self.image_size
            ),
        );
        if factor > 0 && self.image_size % factor == 0 && self.image_size > 0 {
            check(
                self.image_size / factor >= 2,
                "image_size",
                format!(
                    "leaves a {0}x{0} bottleneck after {1} downsampling blocks; at least 2x2 is needed",
                    self.image_size / factor,
                    self.resample_blocks
                ),
            );
        }
        for (key, value) in [
            ("lambda_sty", self.lambda_sty),
            ("lambda_ds", self.lambda_ds),
            ("lambda_cyc", self.lambda_cyc),
            ("r1_gamma", self.r1_gamma),
            ("lr_gde", self.lr_gde),
            ("lr_f", self.lr_f),
        ] {
            check(
                value.is_finite() && value >= 0.0,
                key,
                format!("must be a finite non-negative number, got {value}"),
            );
        }
        for (key, value) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            check(
                (0.0..1.0).contains(&value),
                key,
                format!("must lie in [0, 1), got {value}"),
            );
        }
        check(
            self.ema_decay > 0.0 && self.ema_decay < 1.0,
            "ema_decay",
            format!("must lie strictly between 0 and 1, got {}", self.ema_decay),
        );
        check(
            self.ds_decay_iters <= self.total_iters,
            "ds_decay_iters",
            format!(
                "must not exceed total_iters ({}), got {}",
                self.total_iters, self.ds_decay_iters
            ),
        );
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    /// Channel width after each generator downsampling block, starting with the stem.
    pub fn channel_plan(&self) -> Vec<usize> {
        let mut plan = vec![self.base_channels];
        for _ in 0..self.resample_blocks {
            let last = *plan.last().unwrap();
            plan.push((last * 2).min(self.max_channels));
        }
        plan
    }

    /// Length of the code the generator consumes under the current ablation.
    pub fn code_dim(&self) -> usize {
        match self.ablation.recon_mode {
            ReconMode::Style => self.style_dim,
            ReconMode::Latent => self.latent_dim + self.num_domains,
            ReconMode::None => self.num_domains,
        }
    }

    /// Output length of each style-encoder head.
    pub fn encoder_dim(&self) -> usize {
        match self.ablation.recon_mode {
            ReconMode::Latent => self.latent_dim,
            ReconMode::Style | ReconMode::None => self.style_dim,
        }
    }

    /// Iterations between sample grids and checkpoints during `fit`.
    pub fn report_interval(&self) -> usize {
        (self.total_iters / 10).clamp(1, 5000)
    }
}

/// Cumulative configurations from the multi-task-discriminator baseline up to the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationRung {
    /// Multi-task discriminator; one-hot conditioning by channel concatenation; no R1.
    B,
    /// Adds R1 and AdaIN conditioning.
    C,
    /// Raw latent plus one-hot into the generator, with latent reconstruction.
    D,
    /// Mapping network and style encoder, with style reconstruction.
    E,
    /// Adds the diversity-sensitive term: the full model.
    F,
}

impl AblationRung {
    pub const ALL: [AblationRung; 5] = [
        AblationRung::B,
        AblationRung::C,
        AblationRung::D,
        AblationRung::E,
        AblationRung::F,
    ];

    pub fn letter(self) -> char {
        match self {
            AblationRung::B => 'b',
            AblationRung::C => 'c',
            AblationRung::D => 'd',
            AblationRung::E => 'e',
            AblationRung::F => 'f',
        }
    }

    /// `base` with this rung's switches. `r1_gamma` is zeroed for (b) and kept otherwise.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        let a = &mut cfg.ablation;
        a.discriminator_head = DiscriminatorHead::Multitask;
        a.conditioning = if self == AblationRung::B {
            Conditioning::Concat
        } else {
            Conditioning::Adain
        };
        a.recon_mode = match self {
            AblationRung::B | AblationRung::C => ReconMode::None,
            AblationRung::D => ReconMode::Latent,
            AblationRung::E | AblationRung::F => ReconMode::Style,
        };
        a.use_ds = self == AblationRung::F;
        if self == AblationRung::B {
            cfg.r1_gamma = 0.0;
        }
        cfg
    }
}

impl FromStr for AblationRung {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationRung::ALL
            .into_iter()
            .find(|r| s.trim().eq_ignore_ascii_case(&r.letter().to_string()))
            .ok_or_else(|| ConfigError::Value {
                key: "ablation".into(),
                message: format!("`{s}` is not one of b, c, d, e, f"),
            })
    }
}

/// Load `path` over `preset`, then apply `overrides`, then validate.
pub fn load_config(
    path: &Path,
    preset: Preset,
    overrides: &BTreeMap<String, String>,
) -> Result<ExperimentConfig, ConfigError> {
    if !path.exists() {
        return Err(ConfigError::Missing(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = default_config(preset);
    cfg.apply_text(&text)?;
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
