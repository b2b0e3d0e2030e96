//! Checkpoint archives in the safetensors format.
//!
//! Tensors are stored as little-endian `f64` under prefixed parameter names:
//! `params/` for live networks, `ema/` for moving averages, `adam_m/` and
//! `adam_v/` for optimizer moments. The string metadata carries the format
//! tag, version, full config text, domain names, iteration counter, random
//! stream positions and optimizer step counts.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use stylebridge_autograd::Tensor;

use crate::config::{default_config, ExperimentConfig, Preset};
use crate::error::{CheckpointError, Error, Result};
use crate::networks::ParamStore;
use crate::rng::{StreamPositions, TrainingStreams};
use crate::training::{Adam, ModelBundle, OptimizerSet, Trainer};

pub const FORMAT: &str = "stylebridge-checkpoint";
pub const VERSION: u32 = 1;

/// Config keys that change parameter shapes or names.
const ARCHITECTURE_KEYS: &[&str] = &[
    "image_size",
    "latent_dim",
    "style_dim",
    "hidden_dim",
    "base_channels",
    "max_channels",
    "resample_blocks",
    "ablation.discriminator_head",
    "ablation.conditioning",
    "ablation.recon_mode",
];

#[derive(Serialize, Deserialize)]
struct AdamSteps {
    generator: u64,
    mapping: u64,
    encoder: u64,
    discriminator: u64,
}

fn encode(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn format_err(msg: impl Into<String>) -> Error {
    CheckpointError::Format(msg.into()).into()
}

/// Write the complete training state to `path` (atomically, via a temporary file).
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let bundle = &trainer.bundle;
    let optims = &trainer.optims;
    let mut entries: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut push = |prefix: &str, store: &ParamStore, values: &[Tensor]| {
        for (name, value) in store.names().iter().zip(values) {
            entries.push((format!("{prefix}/{name}"), value.shape().to_vec(), encode(value)));
        }
    };
    for store in bundle.live_stores() {
        push("params", store, store.values());
    }
    for store in bundle.ema_stores() {
        push("ema", store, store.values());
    }
    let pairs: [(&ParamStore, &Adam); 4] = [
        (bundle.nets.generator.params(), &optims.generator),
        (bundle.nets.mapping.params(), &optims.mapping),
        (bundle.nets.encoder.params(), &optims.encoder),
        (bundle.nets.discriminator.params(), &optims.discriminator),
    ];
    for (store, adam) in pairs {
        push("adam_m", store, &adam.m);
        push("adam_v", store, &adam.v);
    }

    let steps = AdamSteps {
        generator: optims.generator.step,
        mapping: optims.mapping.step,
        encoder: optims.encoder.step,
        discriminator: optims.discriminator.step,
    };
    let metadata: HashMap<String, String> = [
        ("format", FORMAT.to_string()),
        ("version", VERSION.to_string()),
        ("config", bundle.cfg.to_config_string()),
        ("domains", serde_json::to_string(&bundle.domains).expect("strings serialize")),
        ("iteration", bundle.iteration.to_string()),
        ("streams", serde_json::to_string(&trainer.streams.positions()).expect("positions serialize")),
        ("adam_steps", serde_json::to_string(&steps).expect("steps serialize")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    let views = entries
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|view| (name.clone(), view))
                .map_err(|e| format_err(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, &Some(metadata)).map_err(|e| format_err(e.to_string()))?;

    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Archive<'a> {
    tensors: SafeTensors<'a>,
    unused: BTreeSet<String>,
}

impl Archive<'_> {
    fn take(&mut self, key: &str, expected: &[usize]) -> Result<Tensor> {
        let view = self
            .tensors
            .tensor(key)
            .map_err(|_| CheckpointError::MissingTensor(key.to_string()))?;
        self.unused.remove(key);
        if view.dtype() != Dtype::F64 {
            return Err(format_err(format!("tensor `{key}` is {:?}, expected F64", view.dtype())));
        }
        if view.shape() != expected {
            return Err(CheckpointError::TensorShape {
                name: key.to_string(),
                found: view.shape().to_vec(),
                expected: expected.to_vec(),
            }
            .into());
        }
        let data = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Tensor::new(expected.to_vec(), data))
    }

    fn fill(&mut self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let values = self.read(prefix, store)?;
        store.set_values(values);
        Ok(())
    }

    fn read(&mut self, prefix: &str, store: &ParamStore) -> Result<Vec<Tensor>> {
        store
            .names()
            .iter()
            .zip(store.values())
            .map(|(name, value)| self.take(&format!("{prefix}/{name}"), value.shape()))
            .collect()
    }

    fn fill_adam(&mut self, store: &ParamStore, adam: &mut Adam, step: u64) -> Result<()> {
        adam.m = self.read("adam_m", store)?;
        adam.v = self.read("adam_v", store)?;
        adam.step = step;
        Ok(())
    }
}

fn meta<'a>(metadata: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    metadata
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| format_err(format!("metadata field `{key}` missing")))
}

/// Read a checkpoint, rebuilding the networks from its stored config.
pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    load(path, None)
}

/// Read a checkpoint for resuming under `cfg`.
///
/// The architecture must match; training-only settings (schedule length,
/// learning rates, loss weights) are taken from `cfg`.
pub fn load_checkpoint_for(path: &Path, cfg: &ExperimentConfig) -> Result<Trainer> {
    load(path, Some(cfg))
}

fn load(path: &Path, expected: Option<&ExperimentConfig>) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| format_err(e.to_string()))?;
    let metadata = header
        .metadata()
        .clone()
        .ok_or_else(|| format_err("no metadata"))?;
    if meta(&metadata, "format")? != FORMAT {
        return Err(format_err(format!("format tag is not `{FORMAT}`")));
    }
    let version: u32 = meta(&metadata, "version")?
        .parse()
        .map_err(|_| format_err("unreadable version"))?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        }
        .into());
    }

    let mut stored = default_config(Preset::Toy);
    stored.apply_text(meta(&metadata, "config")?)?;
    let cfg = match expected {
        None => stored,
        Some(cfg) => {
            if cfg.num_domains != stored.num_domains {
                return Err(CheckpointError::DomainCount {
                    checkpoint: stored.num_domains,
                    expected: cfg.num_domains,
                }
                .into());
            }
            for key in ARCHITECTURE_KEYS {
                let (have, want) = (stored.get(key), cfg.get(key));
                if have != want {
                    return Err(CheckpointError::Architecture {
                        key: key.to_string(),
                        checkpoint: have.unwrap_or_default(),
                        expected: want.unwrap_or_default(),
                    }
                    .into());
                }
            }
            cfg.clone()
        }
    };

    let domains: Vec<String> = serde_json::from_str(meta(&metadata, "domains")?)
        .map_err(|e| format_err(format!("domains: {e}")))?;
    let iteration: usize = meta(&metadata, "iteration")?
        .parse()
        .map_err(|_| format_err("unreadable iteration"))?;
    let positions: StreamPositions = serde_json::from_str(meta(&metadata, "streams")?)
        .map_err(|e| format_err(format!("streams: {e}")))?;
    let steps: AdamSteps = serde_json::from_str(meta(&metadata, "adam_steps")?)
        .map_err(|e| format_err(format!("adam_steps: {e}")))?;

    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| format_err(e.to_string()))?;
    let unused = tensors.names().into_iter().cloned().collect();
    let mut archive = Archive { tensors, unused };

    let mut bundle = ModelBundle::new(&cfg, domains);
    bundle.iteration = iteration;
    let nets = &mut bundle.nets;
    archive.fill("params", nets.generator.params_mut())?;
    archive.fill("params", nets.mapping.params_mut())?;
    archive.fill("params", nets.encoder.params_mut())?;
    archive.fill("params", nets.discriminator.params_mut())?;
    archive.fill("ema", bundle.ema.generator.params_mut())?;
    archive.fill("ema", bundle.ema.mapping.params_mut())?;
    archive.fill("ema", bundle.ema.encoder.params_mut())?;

    let mut optims = OptimizerSet::new(&bundle);
    let nets = &bundle.nets;
    archive.fill_adam(nets.generator.params(), &mut optims.generator, steps.generator)?;
    archive.fill_adam(nets.mapping.params(), &mut optims.mapping, steps.mapping)?;
    archive.fill_adam(nets.encoder.params(), &mut optims.encoder, steps.encoder)?;
    archive.fill_adam(nets.discriminator.params(), &mut optims.discriminator, steps.discriminator)?;
    if let Some(extra) = archive.unused.iter().next() {
        return Err(CheckpointError::UnexpectedTensor(extra.clone()).into());
    }

    let streams = TrainingStreams::restore(&positions)
        .map_err(|e| format_err(format!("stream positions: {e}")))?;
    Ok(Trainer {
        bundle,
        optims,
        streams,
    })
}
