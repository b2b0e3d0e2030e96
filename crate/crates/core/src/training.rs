//! The optimization loop.
//!
//! Every iteration runs a latent-guided step and then a reference-guided step,
//! each made of a discriminator phase followed by a generator phase, and then
//! refreshes the moving-average copies of G, F and E.

use std::collections::hash_map::DefaultHasher;
use std::fs::OpenOptions;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};

use stylebridge_autograd::{Tape, Tensor, Var};

use crate::config::{DiscriminatorHead, ExperimentConfig, ReconMode};
use crate::data::{sample_latents, sample_target_domains, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::{
    adv_loss_d, adv_loss_g, assemble_generator_objective, classification_loss, cycle_loss,
    diversity_loss, latent_recon_loss, r1_penalty, style_recon_loss, DiscriminatorParts,
    GeneratorParts, GeneratorWeights, LossReport, CSV_HEADER,
};
use crate::networks::{
    code_from_latent, code_from_reference, Generator, MappingNetwork, Networks, ParamStore,
    StyleEncoder,
};
use crate::rng::{stream, StreamId, TrainingStreams};

/// `λ_ds0 · max(0, 1 − iter / ds_decay_iters)`.
pub fn lambda_ds_at(iter: usize, cfg: &ExperimentConfig) -> f64 {
    if cfg.ds_decay_iters == 0 {
        return 0.0;
    }
    cfg.lambda_ds * (1.0 - iter as f64 / cfg.ds_decay_iters as f64).max(0.0)
}

/// Moving-average copies of the networks used at inference time.
#[derive(Clone, Debug)]
pub struct Shadow {
    pub generator: Generator,
    pub mapping: MappingNetwork,
    pub encoder: StyleEncoder,
}

/// Live networks, their moving averages and the iteration counter.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub cfg: ExperimentConfig,
    pub domains: Vec<String>,
    pub nets: Networks,
    pub ema: Shadow,
    pub iteration: usize,
}

impl ModelBundle {
    /// Fresh networks initialized from the config's seed; shadows start as copies.
    pub fn new(cfg: &ExperimentConfig, domains: Vec<String>) -> Self {
        let nets = Networks::new(cfg, &mut stream(cfg.seed, StreamId::Init));
        let ema = Shadow {
            generator: nets.generator.clone(),
            mapping: nets.mapping.clone(),
            encoder: nets.encoder.clone(),
        };
        ModelBundle {
            cfg: cfg.clone(),
            domains,
            nets,
            ema,
            iteration: 0,
        }
    }

    pub fn live_stores(&self) -> [&ParamStore; 4] {
        [
            self.nets.generator.params(),
            self.nets.mapping.params(),
            self.nets.encoder.params(),
            self.nets.discriminator.params(),
        ]
    }

    pub fn ema_stores(&self) -> [&ParamStore; 3] {
        [
            self.ema.generator.params(),
            self.ema.mapping.params(),
            self.ema.encoder.params(),
        ]
    }

    /// Hash of every live parameter's bits.
    pub fn live_checksum(&self) -> u64 {
        checksum(&self.live_stores())
    }

    /// Hash of every moving-average parameter's bits.
    pub fn ema_checksum(&self) -> u64 {
        checksum(&self.ema_stores())
    }
}

/// Order-sensitive hash of the bit patterns of every value in `stores`.
pub fn checksum(stores: &[&ParamStore]) -> u64 {
    let mut h = DefaultHasher::new();
    for store in stores {
        for (name, value) in store.iter() {
            name.hash(&mut h);
            value.shape().hash(&mut h);
            for v in value.data() {
                v.to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Adam with bias correction, matching the common deep-learning formulation.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update to `store` from `grads` (same order and shapes).
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2_sqrt = (1.0 - self.beta2.powi(self.step as i32)).sqrt();
        let step_size = self.lr / bc1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut values = Vec::with_capacity(store.len());
        for (i, (param, grad)) in store.values().iter().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let mut p = param.clone();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            }
            values.push(p);
        }
        store.set_values(values);
    }
}

/// One Adam state per trained network; the moving averages have none.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSet {
    pub generator: Adam,
    pub mapping: Adam,
    pub encoder: Adam,
    pub discriminator: Adam,
}

impl OptimizerSet {
    pub fn new(bundle: &ModelBundle) -> Self {
        let cfg = &bundle.cfg;
        let adam = |store: &ParamStore, lr| Adam::new(store, lr, cfg.adam_beta1, cfg.adam_beta2);
        OptimizerSet {
            generator: adam(bundle.nets.generator.params(), cfg.lr_gde),
            mapping: adam(bundle.nets.mapping.params(), cfg.lr_f),
            encoder: adam(bundle.nets.encoder.params(), cfg.lr_gde),
            discriminator: adam(bundle.nets.discriminator.params(), cfg.lr_gde),
        }
    }
}

/// `shadow ← live + decay · (shadow − live)`, parameter by parameter.
pub fn ema_update(shadow: &mut ParamStore, live: &ParamStore, decay: f64) {
    let values = shadow
        .values()
        .iter()
        .zip(live.values())
        .map(|(s, l)| s.zip_map(l, |s, l| l + decay * (s - l)))
        .collect();
    shadow.set_values(values);
}

/// Refresh every moving-average network from its live counterpart.
pub fn update_ema(bundle: &mut ModelBundle, decay: f64) {
    let nets = &bundle.nets;
    ema_update(bundle.ema.generator.params_mut(), nets.generator.params(), decay);
    ema_update(bundle.ema.mapping.params_mut(), nets.mapping.params(), decay);
    ema_update(bundle.ema.encoder.params_mut(), nets.encoder.params(), decay);
}

/// Where the two style codes of a step come from.
#[derive(Clone, Copy, Debug)]
pub enum StyleSource<'a> {
    Latent { z1: &'a Tensor, z2: &'a Tensor },
    Reference { ref1: &'a Tensor, ref2: &'a Tensor },
}

impl StyleSource<'_> {
    pub fn mode_name(&self) -> &'static str {
        match self {
            StyleSource::Latent { .. } => "latent",
            StyleSource::Reference { .. } => "reference",
        }
    }
}

/// Real images and their domains, plus the target domain of each translation.
#[derive(Clone, Copy, Debug)]
pub struct StepBatch<'a> {
    pub x: &'a Tensor,
    pub labels: &'a [usize],
    pub targets: &'a [usize],
}

fn finite(term: &'static str, v: Var<'_>) -> Result<f64> {
    let value = v.value().item();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term })
    }
}

fn check_grads(term: &'static str, grads: &[Tensor]) -> Result<()> {
    if grads.iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite { term })
    }
}

fn first_code<'t>(
    bundle: &ModelBundle,
    tape: &'t Tape,
    source: StyleSource<'_>,
    which: usize,
    bf: &crate::networks::Bound<'t>,
    be: &crate::networks::Bound<'t>,
    targets: &[usize],
) -> Result<Var<'t>> {
    let mode = bundle.cfg.ablation.recon_mode;
    match source {
        StyleSource::Latent { z1, z2 } => {
            let z = if which == 0 { z1 } else { z2 };
            code_from_latent(mode, &bundle.nets.mapping, bf, tape.constant(z.clone()), targets)
        }
        StyleSource::Reference { ref1, ref2 } => {
            let r = if which == 0 { ref1 } else { ref2 };
            code_from_reference(mode, &bundle.nets.encoder, be, tape.constant(r.clone()), targets)
        }
    }
}

/// Update D on real images versus translations; G, F and E are held fixed.
pub fn discriminator_phase(
    bundle: &mut ModelBundle,
    optims: &mut OptimizerSet,
    batch: StepBatch<'_>,
    source: StyleSource<'_>,
) -> Result<DiscriminatorParts> {
    let cfg = bundle.cfg.clone();
    let tape = Tape::new();
    let bg = bundle.nets.generator.params().bind(&tape, false);
    let bf = bundle.nets.mapping.params().bind(&tape, false);
    let be = bundle.nets.encoder.params().bind(&tape, false);
    let bd = bundle.nets.discriminator.params().bind(&tape, true);
    let d = &bundle.nets.discriminator;

    let x = tape.param(batch.x.clone());
    let (real, real_classes) = d.forward_with_classes(&bd, x, batch.labels)?;
    let r1 = if cfg.r1_gamma > 0.0 {
        r1_penalty(real, x, cfg.r1_gamma)?
    } else {
        tape.constant(Tensor::scalar(0.0))
    };

    let fake = {
        let code = first_code(bundle, &tape, source, 0, &bf, &be, batch.targets)?;
        let img = bundle.nets.generator.forward(&bg, tape.constant(batch.x.clone()), code)?;
        img.detach()
    };
    let (fake_logits, _) = d.forward_with_classes(&bd, fake, batch.targets)?;
    let adv = adv_loss_d(real, fake_logits);
    let cls = match (cfg.ablation.discriminator_head, real_classes) {
        (DiscriminatorHead::Acgan, Some(logits)) => classification_loss(logits, batch.labels)?,
        _ => tape.constant(Tensor::scalar(0.0)),
    };
    let parts = DiscriminatorParts {
        adv: finite("adv_d", adv)?,
        r1: finite("r1", r1)?,
        cls: finite("cls_d", cls)?,
        real_score: real.value().map(crate::losses::sigmoid).mean(),
    };
    let grads = tape.gradients(adv + r1 + cls, bd.vars());
    check_grads("total_d", &grads)?;
    optims
        .discriminator
        .update(bundle.nets.discriminator.params_mut(), &grads);
    Ok(parts)
}

/// Update the generator side with D held fixed.
///
/// The latent step trains G, F and E; the reference step trains G only.
pub fn generator_phase(
    bundle: &mut ModelBundle,
    optims: &mut OptimizerSet,
    batch: StepBatch<'_>,
    source: StyleSource<'_>,
) -> Result<LossReport> {
    let cfg = bundle.cfg.clone();
    let mode = cfg.ablation.recon_mode;
    let latent_step = matches!(source, StyleSource::Latent { .. });
    let train_mapping = latent_step && mode == ReconMode::Style;
    let train_encoder = latent_step && mode != ReconMode::None;

    let tape = Tape::new();
    let bg = bundle.nets.generator.params().bind(&tape, true);
    let bf = bundle.nets.mapping.params().bind(&tape, train_mapping);
    let be = bundle.nets.encoder.params().bind(&tape, train_encoder);
    let bd = bundle.nets.discriminator.params().bind(&tape, false);
    let nets = &bundle.nets;
    let zero = tape.constant(Tensor::scalar(0.0));

    let x = tape.constant(batch.x.clone());
    let code1 = first_code(bundle, &tape, source, 0, &bf, &be, batch.targets)?;
    let fake = nets.generator.forward(&bg, x, code1)?;
    let (fake_logits, fake_classes) = nets.discriminator.forward_with_classes(&bd, fake, batch.targets)?;
    let adv = adv_loss_g(fake_logits);
    let cls = match fake_classes {
        Some(logits) => classification_loss(logits, batch.targets)?,
        None => zero,
    };

    let sty = match mode {
        ReconMode::None => zero,
        ReconMode::Style | ReconMode::Latent => {
            let recovered = nets.encoder.forward(&be, fake, batch.targets)?;
            let target = match (mode, source) {
                (ReconMode::Latent, StyleSource::Latent { z1, .. }) => tape.constant(z1.clone()),
                (ReconMode::Latent, StyleSource::Reference { .. }) => code1.narrow(1, 0, cfg.latent_dim),
                _ => code1,
            };
            match mode {
                ReconMode::Latent => latent_recon_loss(target, recovered)?,
                _ => style_recon_loss(target, recovered)?,
            }
        }
    };

    let ds = if cfg.ablation.use_ds {
        let second = tape.no_grad(|| -> Result<Tensor> {
            let code2 = first_code(bundle, &tape, source, 1, &bf, &be, batch.targets)?;
            Ok(nets.generator.forward(&bg, x, code2)?.value())
        })?;
        diversity_loss(fake, tape.constant(second))?
    } else {
        zero
    };

    let source_code = code_from_reference(mode, &nets.encoder, &be, x, batch.labels)?;
    let recon = nets.generator.forward(&bg, fake, source_code)?;
    let cyc = cycle_loss(x, recon)?;

    let parts = GeneratorParts {
        adv: finite("adv_g", adv)?,
        sty: finite("sty", sty)?,
        ds: finite("ds", ds)?,
        cyc: finite("cyc", cyc)?,
        cls: finite("cls_g", cls)?,
    };
    let report = assemble_generator_objective(&parts, &cfg, bundle.iteration)?;
    let weights = GeneratorWeights::at(&cfg, bundle.iteration);
    let total = weights.combine(adv, sty, ds, cyc, cls);

    let mut wrt: Vec<Var<'_>> = bg.vars().to_vec();
    if train_mapping {
        wrt.extend_from_slice(bf.vars());
    }
    if train_encoder {
        wrt.extend_from_slice(be.vars());
    }
    let mut grads = tape.gradients(total, &wrt);
    check_grads("total_g", &grads)?;
    let encoder_grads = if train_encoder {
        grads.split_off(grads.len() - be.vars().len())
    } else {
        Vec::new()
    };
    let mapping_grads = if train_mapping {
        grads.split_off(grads.len() - bf.vars().len())
    } else {
        Vec::new()
    };
    let nets = &mut bundle.nets;
    optims.generator.update(nets.generator.params_mut(), &grads);
    if train_mapping {
        optims.mapping.update(nets.mapping.params_mut(), &mapping_grads);
    }
    if train_encoder {
        optims.encoder.update(nets.encoder.params_mut(), &encoder_grads);
    }
    Ok(report.with_mode(source.mode_name()))
}

fn full_step(
    bundle: &mut ModelBundle,
    optims: &mut OptimizerSet,
    batch: StepBatch<'_>,
    source: StyleSource<'_>,
) -> Result<LossReport> {
    let n = batch.x.shape()[0];
    if batch.labels.len() != n || batch.targets.len() != n {
        return Err(Error::shape("step labels", n, batch.labels.len().min(batch.targets.len())));
    }
    let d = discriminator_phase(bundle, optims, batch, source)?;
    generator_phase(bundle, optims, batch, source)?.with_discriminator(&d)
}

/// Discriminator then generator update with styles from latent codes.
pub fn train_step_latent(
    bundle: &mut ModelBundle,
    optims: &mut OptimizerSet,
    batch: StepBatch<'_>,
    z1: &Tensor,
    z2: &Tensor,
) -> Result<LossReport> {
    full_step(bundle, optims, batch, StyleSource::Latent { z1, z2 })
}

/// Discriminator then generator update with styles from reference images.
pub fn train_step_reference(
    bundle: &mut ModelBundle,
    optims: &mut OptimizerSet,
    batch: StepBatch<'_>,
    ref1: &Tensor,
    ref2: &Tensor,
) -> Result<LossReport> {
    full_step(bundle, optims, batch, StyleSource::Reference { ref1, ref2 })
}

/// Everything needed to continue a run: networks, optimizers and random streams.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub optims: OptimizerSet,
    pub streams: TrainingStreams,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, domains: Vec<String>) -> Self {
        let bundle = ModelBundle::new(cfg, domains);
        let optims = OptimizerSet::new(&bundle);
        Trainer {
            bundle,
            optims,
            streams: TrainingStreams::new(cfg.seed),
        }
    }

    /// One latent-guided step, one reference-guided step, then the moving-average update.
    pub fn iteration(&mut self, dataset: &DomainDataset) -> Result<[LossReport; 2]> {
        let cfg = self.bundle.cfg.clone();
        let (n, size) = (cfg.batch_size, cfg.image_size);
        let batch = dataset.sample_train_batch(n, size, &mut self.streams)?;
        let targets = sample_target_domains(
            &batch.labels,
            cfg.num_domains,
            cfg.target_excludes_source,
            &mut self.streams.targets,
        );
        let z1 = sample_latents(n, cfg.latent_dim, &mut self.streams.latents);
        let z2 = sample_latents(n, cfg.latent_dim, &mut self.streams.latents);
        let refs = dataset.sample_reference_pair(n, size, &mut self.streams)?;

        let step = StepBatch {
            x: &batch.pixels,
            labels: &batch.labels,
            targets: &targets,
        };
        let iter = self.bundle.iteration;
        let latent = train_step_latent(&mut self.bundle, &mut self.optims, step, &z1, &z2)?;
        let step = StepBatch {
            targets: &refs.labels,
            ..step
        };
        let reference = train_step_reference(
            &mut self.bundle,
            &mut self.optims,
            step,
            &refs.first.pixels,
            &refs.second.pixels,
        )?;
        update_ema(&mut self.bundle, cfg.ema_decay);
        self.bundle.iteration = iter + 1;
        Ok([latent, reference])
    }
}

/// Where `fit` writes artifacts and when it stops.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Loss CSV, sample grids and checkpoints go here when set.
    pub out_dir: Option<PathBuf>,
    /// Stop before this iteration instead of `total_iters`.
    pub stop_at: Option<usize>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const LOSS_FILE: &str = "losses.csv";

fn append_losses(path: &Path, reports: &[LossReport]) -> Result<()> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(CSV_HEADER);
        text.push('\n');
    }
    for r in reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Train until `total_iters` (or `stop_at`), reporting every step to `observer`.
///
/// With an output directory, appends to the loss CSV every iteration and
/// writes a sample grid plus a checkpoint every `report_interval` iterations
/// and on a clean stop.
pub fn fit(
    trainer: &mut Trainer,
    dataset: &DomainDataset,
    options: &FitOptions,
    mut observer: impl FnMut(&LossReport),
) -> Result<()> {
    let cfg = trainer.bundle.cfg.clone();
    let end = options.stop_at.unwrap_or(cfg.total_iters).min(cfg.total_iters);
    let interval = cfg.report_interval();
    if let Some(out) = &options.out_dir {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    while trainer.bundle.iteration < end {
        let reports = trainer.iteration(dataset)?;
        for r in &reports {
            observer(r);
        }
        let done = trainer.bundle.iteration;
        if done % interval == 0 || done == 1 {
            log::info!(
                "iter {done}/{}: d {:.4} g {:.4} cyc {:.4} ds {:.4} real {:.3}",
                cfg.total_iters,
                reports[0].total_d,
                reports[0].total_g,
                reports[0].cyc,
                reports[0].ds,
                reports[0].real_score
            );
        }
        if let Some(out) = &options.out_dir {
            append_losses(&out.join(LOSS_FILE), &reports)?;
            if done % interval == 0 {
                let grid = out.join("samples").join(format!("iter_{done:06}.png"));
                crate::synthesis::training_preview(&trainer.bundle, dataset, &grid)?;
                crate::checkpoint::save_checkpoint(trainer, &out.join(CHECKPOINT_FILE))?;
            }
        }
    }
    if let Some(out) = &options.out_dir {
        crate::checkpoint::save_checkpoint(trainer, &out.join(CHECKPOINT_FILE))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_config, Preset};
    use crate::data::{scan_dataset, synthetic};

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = default_config(Preset::Toy);
        cfg.image_size = 16;
        cfg.base_channels = 4;
        cfg.max_channels = 8;
        cfg.resample_blocks = 2;
        cfg.hidden_dim = 16;
        cfg.style_dim = 8;
        cfg.latent_dim = 4;
        cfg.batch_size = 2;
        cfg.total_iters = 10;
        cfg.ds_decay_iters = 10;
        cfg
    }

    fn tiny_dataset() -> (tempfile::TempDir, DomainDataset) {
        let dir = tempfile::tempdir().unwrap();
        synthetic::write_shapes_dataset(dir.path(), 2, 6, 16, 4).unwrap();
        let ds = scan_dataset(dir.path(), 0.0).unwrap();
        (dir, ds)
    }

    #[test]
    fn lambda_schedule() {
        let mut cfg = tiny_cfg();
        cfg.lambda_ds = 2.0;
        cfg.ds_decay_iters = 100;
        assert_eq!(lambda_ds_at(0, &cfg), 2.0);
        assert_eq!(lambda_ds_at(50, &cfg), 1.0);
        assert_eq!(lambda_ds_at(100, &cfg), 0.0);
        assert_eq!(lambda_ds_at(250, &cfg), 0.0);
        let trace: Vec<f64> = (0..120).map(|t| lambda_ds_at(t, &cfg)).collect();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ema_closed_form_and_limits() {
        let cfg = tiny_cfg();
        let bundle = ModelBundle::new(&cfg, vec!["a".into(), "b".into()]);
        let live = bundle.nets.mapping.params().clone();
        let v = 0.3;
        let w = -1.7;
        let d = 0.9;
        let fill = |store: &ParamStore, x: f64| {
            let mut s = store.clone();
            s.set_values(store.values().iter().map(|t| Tensor::full(t.shape(), x)).collect());
            s
        };
        let live = fill(&live, v);
        let mut shadow = fill(&live, w);
        for _ in 0..25 {
            ema_update(&mut shadow, &live, d);
        }
        let expected = v + d.powi(25) * (w - v);
        for t in shadow.values() {
            assert!(t.data().iter().all(|&x| (x - expected).abs() < 1e-10));
        }
        let mut copy = fill(&live, w);
        ema_update(&mut copy, &live, 0.0);
        assert!(copy.values().iter().all(|t| t.data().iter().all(|&x| x == v)));
        let mut frozen = fill(&live, w);
        ema_update(&mut frozen, &live, 1.0);
        assert!(frozen.values().iter().all(|t| t.data().iter().all(|&x| x == w)));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = tiny_cfg();
        let bundle = ModelBundle::new(&cfg, vec!["a".into(), "b".into()]);
        let mut store = bundle.nets.mapping.params().clone();
        let before = store.values()[0].clone();
        let mut adam = Adam::new(&store, 0.01, 0.0, 0.99);
        let grads: Vec<Tensor> = store.values().iter().map(|t| Tensor::full(t.shape(), -3.0)).collect();
        adam.update(&mut store, &grads);
        let moved = store.values()[0].zip_map(&before, |a, b| a - b);
        assert!(moved.data().iter().all(|&d| (d - 0.01).abs() < 1e-9));
    }

    fn phases_cfg() -> ExperimentConfig {
        let mut cfg = tiny_cfg();
        cfg.lr_f = 1e-4;
        cfg
    }

    #[test]
    fn phase_ordering_and_isolation() {
        let (_dir, ds) = tiny_dataset();
        let cfg = phases_cfg();
        let mut trainer = Trainer::new(&cfg, ds.domains().to_vec());
        let batch = ds.sample_train_batch(2, 16, &mut trainer.streams).unwrap();
        let z1 = sample_latents(2, 4, &mut trainer.streams.latents);
        let z2 = sample_latents(2, 4, &mut trainer.streams.latents);
        let step = StepBatch {
            x: &batch.pixels,
            labels: &batch.labels,
            targets: &[1, 0],
        };
        let source = StyleSource::Latent { z1: &z1, z2: &z2 };
        let (b, o) = (&mut trainer.bundle, &mut trainer.optims);
        let g0 = checksum(&[b.nets.generator.params()]);
        let d0 = checksum(&[b.nets.discriminator.params()]);
        let opt_before = o.clone();
        discriminator_phase(b, o, step, source).unwrap();
        let d1 = checksum(&[b.nets.discriminator.params()]);
        assert_ne!(d0, d1);
        assert_eq!(g0, checksum(&[b.nets.generator.params()]));
        assert_eq!(o.generator, opt_before.generator);
        assert_eq!(o.mapping, opt_before.mapping);
        assert_eq!(o.encoder, opt_before.encoder);

        let ema_before = b.ema_checksum();
        let f0 = checksum(&[b.nets.mapping.params()]);
        let e0 = checksum(&[b.nets.encoder.params()]);
        let report = generator_phase(b, o, step, source).unwrap();
        assert_eq!(d1, checksum(&[b.nets.discriminator.params()]));
        assert_ne!(g0, checksum(&[b.nets.generator.params()]));
        assert_ne!(f0, checksum(&[b.nets.mapping.params()]));
        assert_ne!(e0, checksum(&[b.nets.encoder.params()]));
        assert_eq!(o.discriminator.step, 1);
        assert_eq!(ema_before, b.ema_checksum());
        assert!(report.ds > 0.0);

        // The reference step trains only the generator.
        let (f1, e1) = (checksum(&[b.nets.mapping.params()]), checksum(&[b.nets.encoder.params()]));
        let refs = StyleSource::Reference {
            ref1: &batch.pixels,
            ref2: &batch.pixels,
        };
        let r = generator_phase(b, o, step, refs).unwrap();
        assert_eq!(r.ds, 0.0);
        assert_eq!(f1, checksum(&[b.nets.mapping.params()]));
        assert_eq!(e1, checksum(&[b.nets.encoder.params()]));
    }

    #[test]
    fn identical_latents_give_zero_diversity() {
        let (_dir, ds) = tiny_dataset();
        let mut trainer = Trainer::new(&phases_cfg(), ds.domains().to_vec());
        let batch = ds.sample_train_batch(2, 16, &mut trainer.streams).unwrap();
        let z = sample_latents(2, 4, &mut trainer.streams.latents);
        let step = StepBatch {
            x: &batch.pixels,
            labels: &batch.labels,
            targets: &[0, 1],
        };
        let r = train_step_latent(&mut trainer.bundle, &mut trainer.optims, step, &z, &z).unwrap();
        assert_eq!(r.ds, 0.0);
        assert!(r.total_d.is_finite() && r.total_g.is_finite());
    }

    #[test]
    fn fresh_runs_are_bit_identical() {
        let (_dir, ds) = tiny_dataset();
        let run = || {
            let mut trainer = Trainer::new(&phases_cfg(), ds.domains().to_vec());
            let mut reports = Vec::new();
            fit(&mut trainer, &ds, &FitOptions::default(), |r| reports.push(r.clone())).unwrap();
            (reports, trainer.bundle.live_checksum(), trainer.bundle.ema_checksum())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0.len(), 20);
        assert_eq!(a, b);
        assert!(a.0.iter().all(|r| r.total_g.is_finite() && r.total_d.is_finite()));
        let iters: Vec<usize> = a.0.iter().map(|r| r.iter).collect();
        assert_eq!(&iters[..4], &[0, 0, 1, 1]);
    }

    #[test]
    fn ablation_modes_run() {
        let (_dir, ds) = tiny_dataset();
        use crate::config::{Conditioning, DiscriminatorHead};
        let variants = [
            (DiscriminatorHead::Acgan, Conditioning::Concat, ReconMode::None, false),
            (DiscriminatorHead::Multitask, Conditioning::Concat, ReconMode::None, false),
            (DiscriminatorHead::Multitask, Conditioning::Adain, ReconMode::Latent, false),
            (DiscriminatorHead::Multitask, Conditioning::Adain, ReconMode::Latent, true),
            (DiscriminatorHead::Multitask, Conditioning::Adain, ReconMode::Style, false),
        ];
        for (head, cond, recon, use_ds) in variants {
            let mut cfg = phases_cfg();
            cfg.ablation.discriminator_head = head;
            cfg.ablation.conditioning = cond;
            cfg.ablation.recon_mode = recon;
            cfg.ablation.use_ds = use_ds;
            cfg.total_iters = 2;
            let mut trainer = Trainer::new(&cfg, ds.domains().to_vec());
            let mut reports = Vec::new();
            fit(&mut trainer, &ds, &FitOptions::default(), |r| reports.push(r.clone())).unwrap();
            assert_eq!(reports.len(), 4);
            if head == DiscriminatorHead::Acgan {
                assert!(reports[0].cls_d > 0.0 && reports[0].cls_g > 0.0);
            } else {
                assert_eq!(reports[0].cls_d, 0.0);
            }
            if recon == ReconMode::None {
                assert_eq!(reports[0].sty, 0.0);
            }
        }
    }
}
