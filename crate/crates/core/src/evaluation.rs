//! Quality and diversity metrics over translated image sets.
//!
//! Both metrics run against a pluggable [`FeatureExtractor`]. The built-in
//! [`RandomConvExtractor`] is a fixed-seed random CNN: adequate for checking
//! protocol properties and for relative comparisons between runs, but not for
//! numbers comparable with published results, which need pretrained
//! extractor weights (loadable with [`RandomConvExtractor::load`]).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use image::RgbImage;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use stylebridge_autograd::{Tape, Tensor, Var};

use crate::data::{batch_to_rgb, from_rgb_image, resize_rgb, sample_latents, DomainDataset};
use crate::error::{CheckpointError, DatasetError, Error, Result};
use crate::rng::{indexed_stream, stream, StreamId};
use crate::synthesis;
use crate::training::ModelBundle;

/// Styles generated per test image.
pub const STYLES_PER_INPUT: usize = 10;

/// Maps 8-bit images to feature vectors.
pub trait FeatureExtractor {
    fn name(&self) -> &str;

    /// One flat feature vector per image, `[n, d]`.
    fn pooled(&self, images: &[RgbImage]) -> Result<Tensor>;

    /// Per-layer spatial features `[C, H, W]` of one image.
    fn layers(&self, image: &RgbImage) -> Result<Vec<Tensor>>;
}

/// A stack of 3×3 convolutions with ReLU, 2× average pooling between layers.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor {
    name: String,
    input_size: usize,
    layers: Vec<(Tensor, Tensor)>,
}

const EXTRACTOR_WIDTHS: [usize; 4] = [3, 16, 32, 64];

impl RandomConvExtractor {
    /// He-initialized random weights from `seed`; images are resized to `input_size`.
    pub fn new(seed: u64, input_size: usize) -> Self {
        let mut rng = stream(seed, StreamId::Init);
        let layers = EXTRACTOR_WIDTHS
            .windows(2)
            .map(|w| {
                let (cin, cout) = (w[0], w[1]);
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let weight = (0..cout * cin * 9)
                    .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let bias = (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect();
                (
                    Tensor::new(vec![cout, cin, 3, 3], weight),
                    Tensor::new(vec![cout], bias),
                )
            })
            .collect();
        RandomConvExtractor {
            name: format!("random-conv-{seed}"),
            input_size,
            layers,
        }
    }

    /// Read weights saved by [`RandomConvExtractor::save`] or exported from elsewhere.
    ///
    /// Layers are `layer_<i>/weight` (`[out, in, kh, kw]`, odd square kernels)
    /// and `layer_<i>/bias`; metadata holds `name` and `input_size`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::from(CheckpointError::Format(m));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let tensors = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let read = |key: &str| -> Result<Tensor> {
            let view = tensors
                .tensor(key)
                .map_err(|_| CheckpointError::MissingTensor(key.to_string()))?;
            let data: Vec<f64> = match view.dtype() {
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                other => return Err(bad(format!("tensor `{key}` has unsupported dtype {other:?}"))),
            };
            Ok(Tensor::new(view.shape().to_vec(), data))
        };
        let mut layers = Vec::new();
        while tensors.tensor(&format!("layer_{}/weight", layers.len())).is_ok() {
            let i = layers.len();
            layers.push((read(&format!("layer_{i}/weight"))?, read(&format!("layer_{i}/bias"))?));
        }
        if layers.is_empty() {
            return Err(bad("no `layer_0/weight` tensor".into()));
        }
        let input_size = meta
            .get("input_size")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("metadata `input_size` missing".into()))?;
        Ok(RandomConvExtractor {
            name: meta.get("name").cloned().unwrap_or_else(|| "loaded".into()),
            input_size,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let encoded: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| {
                [(format!("layer_{i}/weight"), w), (format!("layer_{i}/bias"), b)]
                    .map(|(k, t)| (k, t.shape().to_vec(), t.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
            })
            .collect();
        let views: Vec<(String, TensorView<'_>)> = encoded
            .iter()
            .map(|(k, s, b)| (k.clone(), TensorView::new(Dtype::F64, s.clone(), b).expect("valid view")))
            .collect();
        let meta: HashMap<String, String> = [
            ("name".to_string(), self.name.clone()),
            ("input_size".to_string(), self.input_size.to_string()),
        ]
        .into();
        let bytes = safetensors::serialize(views, &Some(meta))
            .map_err(|e| Error::from(CheckpointError::Format(e.to_string())))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    fn activations<'t>(&self, tape: &'t Tape, images: &[RgbImage]) -> Vec<Var<'t>> {
        let inputs: Vec<Tensor> = images
            .iter()
            .map(|img| from_rgb_image(&resize_rgb(img.clone(), self.input_size)))
            .collect();
        let mut h = tape.constant(Tensor::stack(&inputs));
        let mut outs = Vec::with_capacity(self.layers.len());
        for (i, (w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.avg_pool2();
            }
            let pad = w.shape()[2] / 2;
            h = h
                .conv2d(tape.constant(w.clone()), Some(tape.constant(b.clone())), pad)
                .relu();
            outs.push(h);
        }
        outs
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn pooled(&self, images: &[RgbImage]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let tape = Tape::new();
            let last = *self.activations(&tape, chunk).last().expect("at least one layer");
            let s = last.shape();
            let pooled = last.mean_to(&[s[0], s[1], 1, 1]).value();
            for i in 0..s[0] {
                rows.push(pooled.index_first(i).reshape(&[s[1]]));
            }
        }
        if rows.is_empty() {
            return Ok(Tensor::zeros(&[0, EXTRACTOR_WIDTHS[3]]));
        }
        Ok(Tensor::stack(&rows))
    }

    fn layers(&self, image: &RgbImage) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        Ok(self
            .activations(&tape, std::slice::from_ref(image))
            .into_iter()
            .map(|v| v.value().index_first(0))
            .collect())
    }
}

/// Mean and unbiased covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

/// Fit a Gaussian to the rows of `features` (`[n, d]`, `n ≥ 2`).
pub fn compute_stats(features: &Tensor) -> Result<GaussianStats> {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature statistics need at least 2 samples, got {n}"
        )));
    }
    let m = DMatrix::from_row_slice(n, d, features.data());
    let mean = DVector::from_iterator(d, m.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov, count: n })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Squared Fréchet distance between two Gaussians.
///
/// The cross term `tr √(√Σa Σb √Σa)` equals the sum of singular values of
/// `√Σa √Σb`; both roots come from symmetric eigendecompositions with
/// negative eigenvalues clamped to zero. Working with singular values avoids
/// squaring small eigenvalues, so the result is symmetric to rounding and
/// values within rounding of zero are reported as exactly zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d || a.cov.nrows() != d || b.cov.nrows() != d {
        return Err(Error::shape("frechet distance", format!("dimension {d}"), format!("dimension {}", b.mean.len())));
    }
    let product = psd_sqrt(&a.cov) * psd_sqrt(&b.cov);
    let cross: f64 = product.singular_values().iter().sum();
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let (ta, tb) = (a.cov.trace(), b.cov.trace());
    let value = mean_term + ta + tb - 2.0 * cross;
    let scale = mean_term + ta + tb;
    Ok(if value <= 1e-12 * scale.max(f64::MIN_POSITIVE) { 0.0 } else { value })
}

/// Sum over layers of the mean absolute difference between channel-normalized features.
pub fn perceptual_distance(a: &RgbImage, b: &RgbImage, extractor: &dyn FeatureExtractor) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::shape(
            "perceptual distance",
            format!("{:?}", a.dimensions()),
            format!("{:?}", b.dimensions()),
        ));
    }
    let (fa, fb) = (extractor.layers(a)?, extractor.layers(b)?);
    Ok(fa.iter().zip(&fb).map(|(x, y)| normalized_l1(x, y)).sum())
}

/// Mean over positions and channels of `|x̂ − ŷ|`, hats denoting per-position unit vectors.
pub fn normalized_l1(x: &Tensor, y: &Tensor) -> f64 {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hw = h * w;
    let (xd, yd) = (x.data(), y.data());
    let mut total = 0.0;
    for p in 0..hw {
        let norm = |d: &[f64]| (0..c).map(|k| d[k * hw + p].powi(2)).sum::<f64>().sqrt() + 1e-10;
        let (nx, ny) = (norm(xd), norm(yd));
        for k in 0..c {
            total += (xd[k * hw + p] / nx - yd[k * hw + p] / ny).abs();
        }
    }
    total / (c * hw) as f64
}

/// How the style of each translation is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Latent,
    Reference,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Latent => "latent",
            EvalMode::Reference => "reference",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(EvalMode::Latent),
            "reference" => Ok(EvalMode::Reference),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}` (latent, reference)"))),
        }
    }
}

/// Anything that translates images given latents or references.
pub trait Translator {
    fn num_domains(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn image_size(&self) -> usize;
    fn translate_latent(&self, x: &Tensor, targets: &[usize], z: &Tensor) -> Result<Tensor>;
    fn translate_reference(&self, x: &Tensor, refs: &Tensor, targets: &[usize]) -> Result<Tensor>;
}

impl Translator for ModelBundle {
    fn num_domains(&self) -> usize {
        self.cfg.num_domains
    }

    fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    fn image_size(&self) -> usize {
        self.cfg.image_size
    }

    fn translate_latent(&self, x: &Tensor, targets: &[usize], z: &Tensor) -> Result<Tensor> {
        synthesis::translate_latent(self, x, targets, z)
    }

    fn translate_reference(&self, x: &Tensor, refs: &Tensor, targets: &[usize]) -> Result<Tensor> {
        synthesis::translate_reference(self, x, refs, targets)
    }
}

/// Metric output: per ordered domain pair and overall mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub mode: EvalMode,
    pub per_pair: BTreeMap<String, f64>,
    pub mean: f64,
    pub seed: u64,
    pub extractor_name: String,
    /// Translated images per ordered pair.
    pub translations_per_pair: BTreeMap<String, usize>,
    /// Output pairs compared per input image (diversity metric only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs_per_input: Option<usize>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn pair_key(dataset: &DomainDataset, src: usize, tgt: usize) -> String {
    format!("{}→{}", dataset.domains()[src], dataset.domains()[tgt])
}

fn load_split(dataset: &DomainDataset, domain: usize, size: usize) -> Result<Vec<Tensor>> {
    let paths = dataset.test_index(domain);
    if paths.is_empty() {
        return Err(DatasetError::EmptyTestSplit {
            domain: dataset.domains()[domain].clone(),
        }
        .into());
    }
    paths.iter().map(|p| dataset.load(p, size)).collect()
}

/// The `STYLES_PER_INPUT` translations of one source image into `tgt`.
///
/// Draws, in order and from `rng`: one latent per style (latent mode) or one
/// reference index into `tgt`'s test split per style (reference mode).
fn translate_one(
    translator: &dyn Translator,
    x: &Tensor,
    tgt: usize,
    mode: EvalMode,
    references: &[Tensor],
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let n = STYLES_PER_INPUT;
    let xs = Tensor::stack(&vec![x.clone(); n]);
    let targets = vec![tgt; n];
    match mode {
        EvalMode::Latent => {
            let z = sample_latents(n, translator.latent_dim(), rng);
            translator.translate_latent(&xs, &targets, &z)
        }
        EvalMode::Reference => {
            let refs: Vec<Tensor> = (0..n)
                .map(|_| references[rng.random_range(0..references.len())].clone())
                .collect();
            translator.translate_reference(&xs, &Tensor::stack(&refs), &targets)
        }
    }
}

/// Visit every ordered pair (src ≠ tgt) and every source test image, handing
/// `visit` the 10 translations of that image.
fn for_each_translation(
    translator: &dyn Translator,
    dataset: &DomainDataset,
    mode: EvalMode,
    seed: u64,
    mut visit: impl FnMut(usize, usize, Vec<RgbImage>) -> Result<()>,
) -> Result<()> {
    let k = dataset.num_domains();
    if translator.num_domains() != k {
        return Err(Error::from(CheckpointError::DomainCount {
            checkpoint: translator.num_domains(),
            expected: k,
        }));
    }
    let size = translator.image_size();
    let tests = (0..k).map(|d| load_split(dataset, d, size)).collect::<Result<Vec<_>>>()?;
    for src in 0..k {
        for tgt in (0..k).filter(|&t| t != src) {
            let mut rng = indexed_stream(seed, StreamId::Evaluation, (src * k + tgt) as u64);
            for x in &tests[src] {
                let out = translate_one(translator, x, tgt, mode, &tests[tgt], &mut rng)?;
                visit(src, tgt, batch_to_rgb(&out))?;
            }
        }
    }
    Ok(())
}

/// Fréchet distance between each pair's translations and the target's training images.
pub fn fid_protocol(
    translator: &dyn Translator,
    dataset: &DomainDataset,
    mode: EvalMode,
    extractor: &dyn FeatureExtractor,
    seed: u64,
) -> Result<MetricReport> {
    let k = dataset.num_domains();
    let size = translator.image_size();
    let mut generated: BTreeMap<(usize, usize), Vec<RgbImage>> = BTreeMap::new();
    for_each_translation(translator, dataset, mode, seed, |src, tgt, images| {
        generated.entry((src, tgt)).or_default().extend(images);
        Ok(())
    })?;

    let mut reference_stats = Vec::with_capacity(k);
    for d in 0..k {
        let real = dataset.load_rgb_split(d, true, size)?;
        reference_stats.push(compute_stats(&extractor.pooled(&real)?)?);
    }
    let mut per_pair = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for ((src, tgt), images) in &generated {
        let stats = compute_stats(&extractor.pooled(images)?)?;
        let key = pair_key(dataset, *src, *tgt);
        per_pair.insert(key.clone(), frechet_distance(&stats, &reference_stats[*tgt])?);
        counts.insert(key, images.len());
    }
    Ok(report("fid", mode, per_pair, counts, seed, extractor, None))
}

/// Mean perceptual distance over the 45 output pairs of each source image.
pub fn lpips_protocol(
    translator: &dyn Translator,
    dataset: &DomainDataset,
    mode: EvalMode,
    extractor: &dyn FeatureExtractor,
    seed: u64,
) -> Result<MetricReport> {
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for_each_translation(translator, dataset, mode, seed, |src, tgt, images| {
        let features = images.iter().map(|img| extractor.layers(img)).collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut pairs = 0;
        for i in 0..features.len() {
            for j in i + 1..features.len() {
                total += features[i]
                    .iter()
                    .zip(&features[j])
                    .map(|(a, b)| normalized_l1(a, b))
                    .sum::<f64>();
                pairs += 1;
            }
        }
        let entry = sums.entry((src, tgt)).or_insert((0.0, 0));
        entry.0 += total / pairs as f64;
        entry.1 += 1;
        Ok(())
    })?;
    let mut per_pair = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for ((src, tgt), (sum, inputs)) in sums {
        let key = pair_key(dataset, src, tgt);
        per_pair.insert(key.clone(), sum / inputs as f64);
        counts.insert(key, inputs * STYLES_PER_INPUT);
    }
    let pairs = STYLES_PER_INPUT * (STYLES_PER_INPUT - 1) / 2;
    Ok(report("lpips", mode, per_pair, counts, seed, extractor, Some(pairs)))
}

fn report(
    metric: &str,
    mode: EvalMode,
    per_pair: BTreeMap<String, f64>,
    counts: BTreeMap<String, usize>,
    seed: u64,
    extractor: &dyn FeatureExtractor,
    pairs_per_input: Option<usize>,
) -> MetricReport {
    let mean = per_pair.values().sum::<f64>() / per_pair.len().max(1) as f64;
    MetricReport {
        metric: metric.to_string(),
        mode,
        per_pair,
        mean,
        seed,
        extractor_name: extractor.name().to_string(),
        translations_per_pair: counts,
        pairs_per_input,
    }
}

/// Mean pixel diversity between translations of `x` under `pairs` random latent pairs.
pub fn latent_diversity(
    translator: &dyn Translator,
    x: &Tensor,
    targets: &[usize],
    pairs: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let n = targets.len();
    let mut total = 0.0;
    for _ in 0..pairs {
        let z1 = sample_latents(n, translator.latent_dim(), rng);
        let z2 = sample_latents(n, translator.latent_dim(), rng);
        let a = translator.translate_latent(x, targets, &z1)?;
        let b = translator.translate_latent(x, targets, &z2)?;
        total += a.zip_map(&b, |p, q| (p - q).abs()).mean();
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn stats_1d(mean: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
            count: 2,
        }
    }

    #[test]
    fn stats_hand_values() {
        let s = compute_stats(&Tensor::new(vec![2, 1], vec![0.0, 2.0])).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.cov[(0, 0)], 2.0);
        let same = compute_stats(&Tensor::new(vec![3, 2], vec![1.0, -2.0, 1.0, -2.0, 1.0, -2.0])).unwrap();
        assert_eq!(same.mean.as_slice(), &[1.0, -2.0]);
        assert!(same.cov.iter().all(|&v| v == 0.0));
        assert!(compute_stats(&Tensor::new(vec![1, 2], vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn frechet_closed_forms() {
        let d = frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(1.0, 1.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        let d = frechet_distance(&stats_1d(0.0, 4.0), &stats_1d(0.0, 1.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        let s = stats_1d(0.3, 2.5);
        assert_eq!(frechet_distance(&s, &s).unwrap(), 0.0);
        let two = GaussianStats {
            mean: DVector::zeros(2),
            cov: DMatrix::identity(2, 2),
            count: 2,
        };
        assert!(frechet_distance(&s, &two).is_err());
    }

    #[test]
    fn perceptual_distance_properties() {
        let ex = RandomConvExtractor::new(3, 16);
        let mut rng = stream(1, StreamId::Data);
        let img = |rng: &mut rand_chacha::ChaCha8Rng| {
            RgbImage::from_fn(16, 16, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
        };
        let (a, b) = (img(&mut rng), img(&mut rng));
        assert_eq!(perceptual_distance(&a, &a, &ex).unwrap(), 0.0);
        let ab = perceptual_distance(&a, &b, &ex).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, perceptual_distance(&b, &a, &ex).unwrap());
        assert!(perceptual_distance(&a, &RgbImage::new(8, 8), &ex).is_err());
    }

    #[test]
    fn normalized_l1_on_single_position() {
        let a = Tensor::new(vec![2, 1, 1], vec![3.0, 4.0]);
        let b = Tensor::new(vec![2, 1, 1], vec![1.0, 0.0]);
        // â = (0.6, 0.8), b̂ = (1, 0): mean of |−0.4| and |0.8|.
        assert!((normalized_l1(&a, &b) - 0.6).abs() < 1e-9);
    }

    #[test]
    fn extractor_is_deterministic_and_round_trips() {
        let ex = RandomConvExtractor::new(5, 16);
        let imgs: Vec<RgbImage> = (0..3u8)
            .map(|i| RgbImage::from_fn(20, 20, |x, y| image::Rgb([x as u8 * 10, y as u8 * 9, i * 70])))
            .collect();
        let f = ex.pooled(&imgs).unwrap();
        assert_eq!(f.shape(), &[3, 64]);
        assert_eq!(f, RandomConvExtractor::new(5, 16).pooled(&imgs).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.safetensors");
        ex.save(&path).unwrap();
        let back = RandomConvExtractor::load(&path).unwrap();
        assert_eq!(back.name(), ex.name());
        assert_eq!(back.pooled(&imgs).unwrap(), f);
        assert_eq!(back.layers(&imgs[0]).unwrap().len(), 3);
    }

    fn psd(dim: usize, values: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_row_slice(dim, dim, &values[..dim * dim]);
        &m * m.transpose()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn frechet_is_symmetric_and_self_zero(
            dim in 1usize..=16,
            a in prop::collection::vec(-1.0f64..1.0, 256),
            b in prop::collection::vec(-1.0f64..1.0, 256),
            ma in prop::collection::vec(-2.0f64..2.0, 16),
            mb in prop::collection::vec(-2.0f64..2.0, 16),
        ) {
            let sa = GaussianStats { mean: DVector::from_column_slice(&ma[..dim]), cov: psd(dim, &a), count: 10 };
            let sb = GaussianStats { mean: DVector::from_column_slice(&mb[..dim]), cov: psd(dim, &b), count: 10 };
            let ab = frechet_distance(&sa, &sb).unwrap();
            let ba = frechet_distance(&sb, &sa).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-8, "{} vs {}", ab, ba);
            prop_assert_eq!(frechet_distance(&sa, &sa).unwrap(), 0.0);
        }
    }
}
