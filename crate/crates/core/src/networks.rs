//! Generator, mapping network, style encoder and discriminator.
//!
//! Parameters live in a [`ParamStore`] keyed by `module/block/layer/kind`
//! names. A forward pass first binds a store onto a [`Tape`], either as
//! trainable parameters or as constants, and then evaluates on the bound
//! variables, so the same code serves training, evaluation and the
//! second-order gradients of the R1 penalty.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use stylebridge_autograd::{Tape, Tensor, Var};

use crate::config::{Conditioning, DiscriminatorHead, ExperimentConfig, ReconMode};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// He-normal with `fan_in` = product of all but the first axis.
    Weight,
    Bias,
    /// Bias of an AdaIN scale map; starts at one so fresh AdaIN acts like plain normalization.
    ScaleBias,
}

/// Named parameter tensors of one network, in construction order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    values: Vec<Tensor>,
    index: Arc<HashMap<String, usize>>,
}

impl ParamStore {
    fn builder() -> StoreBuilder {
        StoreBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn kinds(&self) -> &[ParamKind] {
        &self.kinds
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replace all values; shapes must match.
    pub fn set_values(&mut self, values: Vec<Tensor>) {
        assert_eq!(values.len(), self.values.len(), "parameter count mismatch");
        for ((name, old), new) in self.names.iter().zip(&self.values).zip(&values) {
            assert_eq!(old.shape(), new.shape(), "shape mismatch for {name}");
        }
        self.values = values;
    }

    pub fn set(&mut self, name: &str, value: Tensor) {
        let i = self.index[name];
        assert_eq!(self.values[i].shape(), value.shape(), "shape mismatch for {name}");
        self.values[i] = value;
    }

    /// He-normal weights, zero biases, unit AdaIN scale biases.
    pub fn initialize(&mut self, rng: &mut impl Rng) {
        for (value, kind) in self.values.iter_mut().zip(&self.kinds) {
            let shape = value.shape().to_vec();
            *value = match kind {
                ParamKind::Weight => {
                    let fan_in: usize = shape[1..].iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    let data = (0..value.numel())
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    Tensor::new(shape, data)
                }
                ParamKind::Bias => Tensor::zeros(&shape),
                ParamKind::ScaleBias => Tensor::ones(&shape),
            };
        }
    }

    /// Lift every parameter onto `tape`, trainable or constant.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .values
            .iter()
            .map(|v| if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) })
            .collect();
        Bound {
            index: Arc::clone(&self.index),
            vars,
        }
    }
}

#[derive(Default)]
struct StoreBuilder {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    values: Vec<Tensor>,
}

impl StoreBuilder {
    fn add(&mut self, name: String, shape: &[usize], kind: ParamKind) {
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.kinds.push(kind);
        self.values.push(Tensor::zeros(shape));
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool) {
        self.add(format!("{name}/weight"), &[cout, cin, k, k], ParamKind::Weight);
        if bias {
            self.add(format!("{name}/bias"), &[cout], ParamKind::Bias);
        }
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) {
        self.add(format!("{name}/weight"), &[fout, fin], ParamKind::Weight);
        self.add(format!("{name}/bias"), &[fout], ParamKind::Bias);
    }

    fn adain(&mut self, name: &str, style_dim: usize, channels: usize) {
        self.add(format!("{name}/scale/weight"), &[channels, style_dim], ParamKind::Weight);
        self.add(format!("{name}/scale/bias"), &[channels], ParamKind::ScaleBias);
        self.linear(&format!("{name}/shift"), style_dim, channels);
    }

    fn finish(self, rng: &mut impl Rng) -> ParamStore {
        let index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let mut store = ParamStore {
            names: self.names,
            kinds: self.kinds,
            values: self.values,
            index: Arc::new(index),
        };
        store.initialize(rng);
        store
    }
}

/// A parameter store lifted onto a tape.
pub struct Bound<'t> {
    index: Arc<HashMap<String, usize>>,
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, name: &str) -> Var<'t> {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("no parameter named {name}"),
        }
    }

    fn maybe(&self, name: &str) -> Option<Var<'t>> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    /// All bound variables in store order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    fn conv(&self, name: &str, x: Var<'t>) -> Var<'t> {
        let w = self.var(&format!("{name}/weight"));
        let pad = w.shape()[2] / 2;
        x.conv2d(w, self.maybe(&format!("{name}/bias")), pad)
    }

    fn linear(&self, name: &str, x: Var<'t>) -> Var<'t> {
        x.linear(
            self.var(&format!("{name}/weight")),
            self.maybe(&format!("{name}/bias")),
        )
    }
}

/// Normalize each (sample, channel) plane to zero mean and unit variance.
pub fn instance_norm<'t>(x: Var<'t>) -> Var<'t> {
    let s = x.shape();
    let stat_shape = [s[0], s[1], 1, 1];
    let centered = x - x.mean_to(&stat_shape);
    let var = centered.square().mean_to(&stat_shape);
    centered / (var + NORM_EPS).sqrt()
}

/// Instance normalization followed by a per-sample affine map predicted from `style`.
pub fn adain<'t>(x: Var<'t>, scale: Var<'t>, shift: Var<'t>) -> Var<'t> {
    let s = x.shape();
    let stat_shape = [s[0], s[1], 1, 1];
    instance_norm(x) * scale.reshape(&stat_shape) + shift.reshape(&stat_shape)
}

fn adain_layer<'t>(b: &Bound<'t>, name: &str, x: Var<'t>, style: Var<'t>) -> Var<'t> {
    let scale = b.linear(&format!("{name}/scale"), style);
    let shift = b.linear(&format!("{name}/shift"), style);
    adain(x, scale, shift)
}

fn lrelu(x: Var<'_>) -> Var<'_> {
    x.leaky_relu(LEAKY_SLOPE)
}

/// One-hot rows for `labels`, validating the range.
pub fn one_hot(labels: &[usize], num_domains: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_domains];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_domains {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_domains,
            });
        }
        data[i * num_domains + y] = 1.0;
    }
    Ok(Tensor::new(vec![labels.len(), num_domains], data))
}

/// Pick row-wise branch `labels[i]` out of per-branch outputs, each `[n, d]`.
///
/// Uses a one-hot mask, so unselected branches receive exactly zero gradient.
fn select_branch<'t>(branches: &[Var<'t>], labels: &[usize]) -> Result<Var<'t>> {
    let k = branches.len();
    let mask = one_hot(labels, k)?;
    let tape = branches[0].tape();
    let n = labels.len();
    let d = branches[0].shape()[1];
    let stacked = Var::concat(
        &branches.iter().map(|v| v.reshape(&[n, 1, d])).collect::<Vec<_>>(),
        1,
    );
    let mask = tape.constant(mask.reshape(&[n, k, 1]));
    Ok((stacked * mask).sum_to(&[n, 1, d]).reshape(&[n, d]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Resample {
    None,
    Down,
    Up,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Norm {
    None,
    Instance,
    Adain,
}

/// Pre-activation residual block description.
#[derive(Clone, Debug)]
struct ResBlock {
    name: String,
    cin: usize,
    cout: usize,
    norm: Norm,
    resample: Resample,
}

impl ResBlock {
    fn declare(&self, sb: &mut StoreBuilder, style_dim: usize) {
        let n = &self.name;
        // Upsampling blocks widen in the first conv, the others in the second.
        let mid = if self.resample == Resample::Up { self.cout } else { self.cin };
        if self.norm == Norm::Adain {
            sb.adain(&format!("{n}/norm1"), style_dim, self.cin);
            sb.adain(&format!("{n}/norm2"), style_dim, mid);
        }
        sb.conv(&format!("{n}/conv1"), self.cin, mid, 3, true);
        sb.conv(&format!("{n}/conv2"), mid, self.cout, 3, true);
        if self.cin != self.cout {
            sb.conv(&format!("{n}/shortcut"), self.cin, self.cout, 1, false);
        }
    }

    fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>, style: Option<Var<'t>>) -> Var<'t> {
        let n = &self.name;
        let norm = |h: Var<'t>, which: &str| match self.norm {
            Norm::None => h,
            Norm::Instance => instance_norm(h),
            Norm::Adain => adain_layer(
                b,
                &format!("{n}/{which}"),
                h,
                style.expect("AdaIN block needs a style code"),
            ),
        };

        let mut h = lrelu(norm(x, "norm1"));
        if self.resample == Resample::Up {
            h = h.upsample2();
        }
        h = b.conv(&format!("{n}/conv1"), h);
        if self.resample == Resample::Down {
            h = h.avg_pool2();
        }
        h = b.conv(&format!("{n}/conv2"), lrelu(norm(h, "norm2")));

        let mut skip = x;
        if self.resample == Resample::Up {
            skip = skip.upsample2();
        }
        if self.cin != self.cout {
            skip = b.conv(&format!("{n}/shortcut"), skip);
        }
        if self.resample == Resample::Down {
            skip = skip.avg_pool2();
        }
        (h + skip) * std::f64::consts::FRAC_1_SQRT_2
    }
}

/// Image-to-image network conditioned on a code per sample.
#[derive(Clone, Debug)]
pub struct Generator {
    blocks: Vec<ResBlock>,
    conditioning: Conditioning,
    code_dim: usize,
    image_size: usize,
    params: ParamStore,
}

impl Generator {
    pub fn new(cfg: &ExperimentConfig, rng: &mut impl Rng) -> Self {
        let plan = cfg.channel_plan();
        let r = cfg.resample_blocks;
        let bottleneck = plan[r];
        let conditioning = cfg.ablation.conditioning;
        let code_dim = cfg.code_dim();
        let styled = if conditioning == Conditioning::Adain { Norm::Adain } else { Norm::Instance };

        let mut blocks = Vec::new();
        for i in 0..r {
            blocks.push(ResBlock {
                name: format!("generator/down_{i}"),
                cin: plan[i],
                cout: plan[i + 1],
                norm: Norm::Instance,
                resample: Resample::Down,
            });
        }
        for i in 0..4 {
            blocks.push(ResBlock {
                name: format!("generator/mid_{i}"),
                cin: bottleneck,
                cout: bottleneck,
                norm: if i < 2 { Norm::Instance } else { styled },
                resample: Resample::None,
            });
        }
        for i in 0..r {
            blocks.push(ResBlock {
                name: format!("generator/up_{i}"),
                cin: plan[r - i],
                cout: plan[r - i - 1],
                norm: styled,
                resample: Resample::Up,
            });
        }

        let mut sb = ParamStore::builder();
        let stem_in = match conditioning {
            Conditioning::Adain => 3,
            Conditioning::Concat => 3 + code_dim,
        };
        sb.conv("generator/stem/conv", stem_in, plan[0], 3, true);
        for block in &blocks {
            block.declare(&mut sb, code_dim);
        }
        sb.conv("generator/head/conv", plan[0], 3, 1, true);
        Generator {
            blocks,
            conditioning,
            code_dim,
            image_size: cfg.image_size,
            params: sb.finish(rng),
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    /// Number of AdaIN layers (zero under concatenation conditioning).
    pub fn adain_layers(&self) -> usize {
        self.blocks.iter().filter(|b| b.norm == Norm::Adain).count() * 2
    }

    /// `G(x, code)` for `x: [n, 3, h, w]`, `code: [n, code_dim]`.
    pub fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>, code: Var<'t>) -> Result<Var<'t>> {
        let xs = x.shape();
        let cs = code.shape();
        if xs.len() != 4 || xs[1] != 3 {
            return Err(Error::shape("generator input", "[n, 3, h, w]", format!("{xs:?}")));
        }
        if cs.len() != 2 || cs[0] != xs[0] || cs[1] != self.code_dim {
            return Err(Error::shape(
                "generator code",
                format!("[{}, {}]", xs[0], self.code_dim),
                format!("{cs:?}"),
            ));
        }
        let stride = 1usize << self.blocks.iter().filter(|b| b.resample == Resample::Down).count();
        if xs[2] % stride != 0 || xs[3] % stride != 0 {
            return Err(Error::shape(
                "generator input",
                format!("spatial size divisible by {stride}"),
                format!("{xs:?}"),
            ));
        }
        let input = match self.conditioning {
            Conditioning::Adain => x,
            Conditioning::Concat => {
                let planes = code
                    .reshape(&[xs[0], self.code_dim, 1, 1])
                    .broadcast_to(&[xs[0], self.code_dim, xs[2], xs[3]]);
                Var::concat(&[x, planes], 1)
            }
        };
        let style = (self.conditioning == Conditioning::Adain).then_some(code);
        let mut h = b.conv("generator/stem/conv", input);
        for block in &self.blocks {
            h = block.forward(b, h, style);
        }
        Ok(b.conv("generator/head/conv", lrelu(instance_norm(h))).tanh())
    }

    /// Evaluate without recording gradients.
    pub fn eval(&self, x: &Tensor, code: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        Ok(self
            .forward(&b, tape.constant(x.clone()), tape.constant(code.clone()))?
            .value())
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }
}

/// Latent code to per-domain style code.
#[derive(Clone, Debug)]
pub struct MappingNetwork {
    num_domains: usize,
    latent_dim: usize,
    params: ParamStore,
}

const MAPPING_SHARED: usize = 4;
const MAPPING_BRANCH: usize = 4;

impl MappingNetwork {
    pub fn new(cfg: &ExperimentConfig, rng: &mut impl Rng) -> Self {
        let mut sb = ParamStore::builder();
        let mut width = cfg.latent_dim;
        for i in 0..MAPPING_SHARED {
            sb.linear(&format!("mapping/shared_{i}/linear"), width, cfg.hidden_dim);
            width = cfg.hidden_dim;
        }
        for k in 0..cfg.num_domains {
            for j in 0..MAPPING_BRANCH {
                let out = if j + 1 == MAPPING_BRANCH { cfg.style_dim } else { cfg.hidden_dim };
                sb.linear(&format!("mapping/branch_{k}/fc_{j}/linear"), cfg.hidden_dim, out);
            }
        }
        MappingNetwork {
            num_domains: cfg.num_domains,
            latent_dim: cfg.latent_dim,
            params: sb.finish(rng),
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward<'t>(&self, b: &Bound<'t>, z: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        let zs = z.shape();
        if zs.len() != 2 || zs[0] != labels.len() || zs[1] != self.latent_dim {
            return Err(Error::shape(
                "mapping input",
                format!("[{}, {}]", labels.len(), self.latent_dim),
                format!("{zs:?}"),
            ));
        }
        let mut h = z;
        for i in 0..MAPPING_SHARED {
            h = b.linear(&format!("mapping/shared_{i}/linear"), h).relu();
        }
        let branches: Vec<Var<'t>> = (0..self.num_domains)
            .map(|k| {
                let mut o = h;
                for j in 0..MAPPING_BRANCH {
                    o = b.linear(&format!("mapping/branch_{k}/fc_{j}/linear"), o);
                    if j + 1 < MAPPING_BRANCH {
                        o = o.relu();
                    }
                }
                o
            })
            .collect();
        select_branch(&branches, labels)
    }

    pub fn eval(&self, z: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        Ok(self.forward(&b, tape.constant(z.clone()), labels)?.value())
    }
}

/// Convolutional trunk shared by the style encoder and the discriminator.
#[derive(Clone, Debug)]
struct Trunk {
    module: &'static str,
    blocks: Vec<ResBlock>,
    image_size: usize,
    features: usize,
}

impl Trunk {
    fn new(module: &'static str, cfg: &ExperimentConfig, sb: &mut StoreBuilder) -> Self {
        let mut size = cfg.image_size;
        let mut channels = cfg.base_channels;
        sb.conv(&format!("{module}/stem/conv"), 3, channels, 3, true);
        let mut blocks = Vec::new();
        while size > 4 {
            let cout = (channels * 2).min(cfg.max_channels);
            let block = ResBlock {
                name: format!("{module}/block_{}", blocks.len()),
                cin: channels,
                cout,
                norm: Norm::None,
                resample: Resample::Down,
            };
            block.declare(sb, 0);
            blocks.push(block);
            channels = cout;
            size /= 2;
        }
        Trunk {
            module,
            blocks,
            image_size: cfg.image_size,
            features: channels * size * size,
        }
    }

    fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != 3 || xs[2] != self.image_size || xs[3] != self.image_size {
            return Err(Error::shape(
                self.module,
                format!("[n, 3, {0}, {0}]", self.image_size),
                format!("{xs:?}"),
            ));
        }
        let mut h = b.conv(&format!("{}/stem/conv", self.module), x);
        for block in &self.blocks {
            h = block.forward(b, h, None);
        }
        Ok(lrelu(h).reshape(&[xs[0], self.features]))
    }
}

/// Image to per-domain style code.
#[derive(Clone, Debug)]
pub struct StyleEncoder {
    trunk: Trunk,
    num_domains: usize,
    params: ParamStore,
}

impl StyleEncoder {
    pub fn new(cfg: &ExperimentConfig, rng: &mut impl Rng) -> Self {
        let mut sb = ParamStore::builder();
        let trunk = Trunk::new("encoder", cfg, &mut sb);
        for k in 0..cfg.num_domains {
            sb.linear(&format!("encoder/head_{k}/linear"), trunk.features, cfg.encoder_dim());
        }
        StyleEncoder {
            trunk,
            num_domains: cfg.num_domains,
            params: sb.finish(rng),
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn trunk_blocks(&self) -> usize {
        self.trunk.blocks.len()
    }

    pub fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        let h = self.trunk.forward(b, x)?;
        let heads: Vec<Var<'t>> = (0..self.num_domains)
            .map(|k| b.linear(&format!("encoder/head_{k}/linear"), h))
            .collect();
        select_branch(&heads, labels)
    }

    pub fn eval(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        Ok(self.forward(&b, tape.constant(x.clone()), labels)?.value())
    }
}

/// Raw discriminator outputs for a batch.
pub struct DiscOutput<'t> {
    /// `[n, K]` per-domain real/fake logits (multitask) or `[n, 1]` (ACGAN).
    pub logits: Var<'t>,
    /// `[n, K]` domain-classification logits (ACGAN only).
    pub class_logits: Option<Var<'t>>,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    trunk: Trunk,
    head: DiscriminatorHead,
    num_domains: usize,
    params: ParamStore,
}

impl Discriminator {
    pub fn new(cfg: &ExperimentConfig, rng: &mut impl Rng) -> Self {
        let mut sb = ParamStore::builder();
        let trunk = Trunk::new("discriminator", cfg, &mut sb);
        let head = cfg.ablation.discriminator_head;
        match head {
            DiscriminatorHead::Multitask => {
                for k in 0..cfg.num_domains {
                    sb.linear(&format!("discriminator/head_{k}/linear"), trunk.features, 1);
                }
            }
            DiscriminatorHead::Acgan => {
                sb.linear("discriminator/adv_head/linear", trunk.features, 1);
                sb.linear("discriminator/cls_head/linear", trunk.features, cfg.num_domains);
            }
        }
        Discriminator {
            trunk,
            head,
            num_domains: cfg.num_domains,
            params: sb.finish(rng),
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn head(&self) -> DiscriminatorHead {
        self.head
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    /// One trunk pass producing every head's output.
    pub fn forward_all<'t>(&self, b: &Bound<'t>, x: Var<'t>) -> Result<DiscOutput<'t>> {
        let h = self.trunk.forward(b, x)?;
        Ok(match self.head {
            DiscriminatorHead::Multitask => {
                let heads: Vec<Var<'t>> = (0..self.num_domains)
                    .map(|k| b.linear(&format!("discriminator/head_{k}/linear"), h))
                    .collect();
                DiscOutput {
                    logits: Var::concat(&heads, 1),
                    class_logits: None,
                }
            }
            DiscriminatorHead::Acgan => DiscOutput {
                logits: b.linear("discriminator/adv_head/linear", h),
                class_logits: Some(b.linear("discriminator/cls_head/linear", h)),
            },
        })
    }

    /// Real/fake logit of each sample for its label's branch, `[n]`.
    pub fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        Ok(self.forward_with_classes(b, x, labels)?.0)
    }

    /// Selected logits plus, in ACGAN mode, the classification logits.
    pub fn forward_with_classes<'t>(
        &self,
        b: &Bound<'t>,
        x: Var<'t>,
        labels: &[usize],
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let n = x.shape()[0];
        if labels.len() != n {
            return Err(Error::shape("discriminator labels", n.to_string(), labels.len().to_string()));
        }
        let out = self.forward_all(b, x)?;
        let logits = match self.head {
            DiscriminatorHead::Multitask => {
                let mask = b.vars()[0].tape().constant(one_hot(labels, self.num_domains)?);
                (out.logits * mask).sum_to(&[n, 1]).reshape(&[n])
            }
            DiscriminatorHead::Acgan => {
                one_hot(labels, self.num_domains)?;
                out.logits.reshape(&[n])
            }
        };
        Ok((logits, out.class_logits))
    }

    pub fn eval(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        Ok(self.forward(&b, tape.constant(x.clone()), labels)?.value())
    }
}

/// Generator code for latent-guided synthesis under `mode`.
///
/// Style mode maps `z` through the mapping network; latent mode feeds `z`
/// alongside a domain one-hot; `None` feeds the one-hot alone.
pub fn code_from_latent<'t>(
    mode: ReconMode,
    mapping: &MappingNetwork,
    bound: &Bound<'t>,
    z: Var<'t>,
    labels: &[usize],
) -> Result<Var<'t>> {
    let k = mapping.num_domains;
    let tape = z.tape();
    match mode {
        ReconMode::Style => mapping.forward(bound, z, labels),
        ReconMode::Latent => Ok(Var::concat(&[z, tape.constant(one_hot(labels, k)?)], 1)),
        ReconMode::None => Ok(tape.constant(one_hot(labels, k)?)),
    }
}

/// Generator code extracted from images `x` for domains `labels` under `mode`.
pub fn code_from_reference<'t>(
    mode: ReconMode,
    encoder: &StyleEncoder,
    bound: &Bound<'t>,
    x: Var<'t>,
    labels: &[usize],
) -> Result<Var<'t>> {
    let k = encoder.num_domains;
    let tape = x.tape();
    match mode {
        ReconMode::Style => encoder.forward(bound, x, labels),
        ReconMode::Latent => {
            let z = encoder.forward(bound, x, labels)?;
            Ok(Var::concat(&[z, tape.constant(one_hot(labels, k)?)], 1))
        }
        ReconMode::None => Ok(tape.constant(one_hot(labels, k)?)),
    }
}

/// The four networks built from one config with one initialization stream.
#[derive(Clone, Debug)]
pub struct Networks {
    pub generator: Generator,
    pub mapping: MappingNetwork,
    pub encoder: StyleEncoder,
    pub discriminator: Discriminator,
}

impl Networks {
    pub fn new(cfg: &ExperimentConfig, rng: &mut impl Rng) -> Self {
        Networks {
            generator: Generator::new(cfg, rng),
            mapping: MappingNetwork::new(cfg, rng),
            encoder: StyleEncoder::new(cfg, rng),
            discriminator: Discriminator::new(cfg, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_config, Preset};
    use crate::rng::{stream, StreamId};

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = default_config(Preset::Toy);
        cfg.image_size = 16;
        cfg.base_channels = 4;
        cfg.max_channels = 8;
        cfg.resample_blocks = 2;
        cfg.hidden_dim = 16;
        cfg.style_dim = 8;
        cfg.latent_dim = 4;
        cfg.num_domains = 3;
        cfg
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = stream(seed, StreamId::Data);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn generator_preserves_shape_and_is_bounded() {
        let cfg = small_cfg();
        let g = Generator::new(&cfg, &mut stream(0, StreamId::Init));
        for size in [16, 32] {
            let x = random(&[2, 3, size, size], 1);
            let y = g.eval(&x, &random(&[2, cfg.style_dim], 2)).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| v.abs() < 1.0));
        }
        let err = g.eval(&random(&[2, 3, 16, 16], 1), &random(&[2, 5], 2)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn default_layout_block_counts() {
        let cfg = default_config(Preset::Animal);
        let g = Generator::new(&cfg, &mut stream(0, StreamId::Init));
        let count = |p: &str| {
            g.blocks.iter().filter(|b| b.name.starts_with(&format!("generator/{p}_"))).count()
        };
        assert_eq!((count("down"), count("mid"), count("up")), (4, 4, 4));
        let e = StyleEncoder::new(&cfg, &mut stream(0, StreamId::Init));
        assert_eq!(e.trunk_blocks(), 6);
        let m = MappingNetwork::new(&cfg, &mut stream(0, StreamId::Init));
        let m_layers = m.params.names().iter().filter(|n| n.ends_with("/weight")).count();
        assert_eq!(m_layers, 4 + 4 * cfg.num_domains);
    }

    #[test]
    fn init_biases_and_weight_variance() {
        let cfg = default_config(Preset::Animal);
        let g = Generator::new(&cfg, &mut stream(0, StreamId::Init));
        for (name, value) in g.params().iter() {
            if name.ends_with("/scale/bias") {
                assert!(value.data().iter().all(|&v| v == 1.0), "{name}");
            } else if name.ends_with("/bias") {
                assert!(value.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let m = MappingNetwork::new(&cfg, &mut stream(0, StreamId::Init));
        let w = m.params().get("mapping/shared_1/linear/weight").unwrap();
        assert_eq!(w.shape(), &[512, 512]);
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.numel() as f64;
        let expected = 2.0 / 512.0;
        assert!((var / expected - 1.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn unit_scale_adain_is_instance_norm() {
        let tape = Tape::new();
        let x = tape.constant(random(&[2, 3, 4, 4], 3));
        let plain = instance_norm(x).value();
        let ones = tape.constant(Tensor::ones(&[2, 3]));
        let zeros = tape.constant(Tensor::zeros(&[2, 3]));
        assert_eq!(adain(x, ones, zeros).value(), plain);
        for plane in plain.data().chunks(16) {
            let mean = plane.iter().sum::<f64>() / 16.0;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        let shift = tape.constant(Tensor::full(&[2, 3], 0.7));
        let flat = adain(x, zeros, shift).value();
        assert!(flat.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let constant = tape.constant(Tensor::full(&[1, 1, 2, 2], 3.0));
        assert!(instance_norm(constant).value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_adain_with_zero_style_matches_plain_norm() {
        let cfg = small_cfg();
        let g = Generator::new(&cfg, &mut stream(0, StreamId::Init));
        let tape = Tape::new();
        let b = g.params().bind(&tape, false);
        let s = tape.constant(Tensor::zeros(&[1, cfg.style_dim]));
        let x8 = tape.constant(random(&[1, 8, 4, 4], 5));
        let styled = adain_layer(&b, "generator/up_0/norm1", x8, s).value();
        assert_eq!(styled, instance_norm(x8).value());
    }

    #[test]
    fn batched_equals_looped() {
        let cfg = small_cfg();
        let nets = Networks::new(&cfg, &mut stream(0, StreamId::Init));
        let labels = [2, 0, 1];
        let z = random(&[3, cfg.latent_dim], 7);
        let x = random(&[3, 3, 16, 16], 8);
        let s = nets.mapping.eval(&z, &labels).unwrap();
        let e = nets.encoder.eval(&x, &labels).unwrap();
        let d = nets.discriminator.eval(&x, &labels).unwrap();
        let g = nets.generator.eval(&x, &s).unwrap();
        for i in 0..3 {
            let zi = z.index_first(i).reshape(&[1, cfg.latent_dim]);
            let xi = x.index_first(i).reshape(&[1, 3, 16, 16]);
            let si = nets.mapping.eval(&zi, &labels[i..=i]).unwrap();
            assert_eq!(si.data(), s.index_first(i).data());
            assert_eq!(nets.encoder.eval(&xi, &labels[i..=i]).unwrap().data(), e.index_first(i).data());
            assert_eq!(nets.discriminator.eval(&xi, &labels[i..=i]).unwrap().data(), &d.data()[i..=i]);
            assert_eq!(nets.generator.eval(&xi, &si).unwrap().data(), g.index_first(i).data());
        }
        assert_eq!(s.shape(), &[3, cfg.style_dim]);
        assert_ne!(
            nets.mapping.eval(&z, &[0, 0, 0]).unwrap(),
            nets.mapping.eval(&z, &[1, 1, 1]).unwrap()
        );
    }

    #[test]
    fn discriminator_selection_matches_full_output() {
        let cfg = small_cfg();
        let d = Discriminator::new(&cfg, &mut stream(0, StreamId::Init));
        let x = random(&[2, 3, 16, 16], 9);
        let tape = Tape::new();
        let b = d.params().bind(&tape, false);
        let all = d.forward_all(&b, tape.constant(x.clone())).unwrap().logits.value();
        assert_eq!(all.shape(), &[2, 3]);
        let picked = d.eval(&x, &[1, 2]).unwrap();
        assert_eq!(picked.data(), &[all.data()[1], all.data()[5]]);
        assert_ne!(all.data()[0], all.data()[1]);
        assert!(matches!(
            d.eval(&x, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, num_domains: 3 })
        ));
    }

    #[test]
    fn branch_gradients_are_isolated() {
        let cfg = small_cfg();
        let nets = Networks::new(&cfg, &mut stream(0, StreamId::Init));
        let tape = Tape::new();
        let labels = [1, 1];
        let check = |store: &ParamStore, out: Var<'_>, b: &Bound<'_>, own: &str| {
            let grads = tape.gradients(out.square().sum(), b.vars());
            for ((name, g), _) in store.names().iter().zip(&grads).zip(0..) {
                let other_branch = (name.contains("/branch_") || name.contains("/head_"))
                    && !name.contains(own);
                if other_branch {
                    assert!(g.data().iter().all(|&v| v == 0.0), "{name} leaked gradient");
                } else if name.contains(own) && name.ends_with("weight") {
                    assert!(g.max_abs() > 0.0, "{name} got no gradient");
                }
            }
        };
        let bm = nets.mapping.params().bind(&tape, true);
        let s = nets.mapping.forward(&bm, tape.constant(random(&[2, 4], 1)), &labels).unwrap();
        check(nets.mapping.params(), s, &bm, "branch_1/");
        let x = tape.constant(random(&[2, 3, 16, 16], 2));
        let be = nets.encoder.params().bind(&tape, true);
        let e = nets.encoder.forward(&be, x, &labels).unwrap();
        check(nets.encoder.params(), e, &be, "head_1/");
        let bd = nets.discriminator.params().bind(&tape, true);
        let d = nets.discriminator.forward(&bd, x, &labels).unwrap();
        check(nets.discriminator.params(), d, &bd, "head_1/");
    }

    #[test]
    fn concat_conditioning_has_no_adain() {
        let mut cfg = small_cfg();
        cfg.ablation.conditioning = Conditioning::Concat;
        cfg.ablation.recon_mode = ReconMode::None;
        let g = Generator::new(&cfg, &mut stream(0, StreamId::Init));
        assert_eq!(g.adain_layers(), 0);
        assert!(g.params().names().iter().all(|n| !n.contains("/scale/")));
        assert_eq!(g.params().get("generator/stem/conv/weight").unwrap().shape()[1], 3 + 3);
        let x = random(&[2, 3, 16, 16], 1);
        let a = g.eval(&x, &one_hot(&[0, 0], 3).unwrap()).unwrap();
        let b = g.eval(&x, &one_hot(&[2, 2], 3).unwrap()).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_ne!(a, b);

        let adain_g = Generator::new(&small_cfg(), &mut stream(0, StreamId::Init));
        assert_eq!(adain_g.adain_layers(), 2 * (2 + 2));
    }

    #[test]
    fn acgan_head_layout() {
        let mut cfg = small_cfg();
        cfg.ablation.discriminator_head = DiscriminatorHead::Acgan;
        let d = Discriminator::new(&cfg, &mut stream(0, StreamId::Init));
        let tape = Tape::new();
        let b = d.params().bind(&tape, false);
        let out = d.forward_all(&b, tape.constant(random(&[2, 3, 16, 16], 1))).unwrap();
        assert_eq!(out.logits.shape(), vec![2, 1]);
        assert_eq!(out.class_logits.unwrap().shape(), vec![2, 3]);
    }

    #[test]
    fn parameter_names_follow_scheme() {
        let nets = Networks::new(&small_cfg(), &mut stream(0, StreamId::Init));
        let stores = [
            nets.generator.params(),
            nets.mapping.params(),
            nets.encoder.params(),
            nets.discriminator.params(),
        ];
        for store in stores {
            for name in store.names() {
                let parts: Vec<&str> = name.split('/').collect();
                assert!(parts.len() >= 4, "{name}");
                assert!(["weight", "bias"].contains(parts.last().unwrap()), "{name}");
            }
        }
        assert!(nets.generator.params().get("generator/down_0/conv1/weight").is_some());
    }
}
