//! Folder-per-domain datasets, seeded batch sampling, and pixel conversion.
//!
//! A dataset root holds one subfolder per domain; the sorted subfolder names
//! define the domain labels. Images are resized to the training resolution,
//! randomly mirrored, and scaled to `[-1, 1]`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::imageops::FilterType;
use image::RgbImage;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use stylebridge_autograd::Tensor;

use crate::error::{DatasetError, Error, Result};
use crate::rng::TrainingStreams;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// How many times a sampler retries after an unreadable image before giving up.
const MAX_DECODE_RETRIES: usize = 32;

pub struct DomainDataset {
    root: PathBuf,
    domains: Vec<String>,
    train: Vec<Vec<PathBuf>>,
    test: Vec<Vec<PathBuf>>,
    skipped: Vec<PathBuf>,
    resolution: (u32, u32),
    cache: Mutex<HashMap<(PathBuf, usize), Tensor>>,
}

impl fmt::Debug for DomainDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainDataset")
            .field("root", &self.root)
            .field("domains", &self.domains)
            .field("train", &self.train.iter().map(Vec::len).collect::<Vec<_>>())
            .field("test", &self.test.iter().map(Vec::len).collect::<Vec<_>>())
            .finish()
    }
}

/// A batch of images in `[-1, 1]` with their domain labels.
#[derive(Clone, Debug)]
pub struct ImageBatch {
    /// `(batch, 3, size, size)`.
    pub pixels: Tensor,
    pub labels: Vec<usize>,
    /// Source file and whether it was mirrored, per element.
    pub sources: Vec<(PathBuf, bool)>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Two reference batches whose elements share target domains position by position.
#[derive(Clone, Debug)]
pub struct ReferencePair {
    pub first: ImageBatch,
    pub second: ImageBatch,
    pub labels: Vec<usize>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Number of images held out for testing out of `n`.
pub fn test_count(n: usize, test_fraction: f64) -> usize {
    ((test_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Scan `root/<domain>/*.{png,jpg}` and split each domain deterministically.
///
/// The last `ceil(test_fraction * N)` files of each domain's sorted list form
/// the test split. Files whose headers cannot be decoded are skipped.
pub fn scan_dataset(root: &Path, test_fraction: f64) -> Result<DomainDataset> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DatasetError::BadTestFraction(test_fraction).into());
    }
    if !root.is_dir() {
        return Err(DatasetError::PathNotFound(root.to_path_buf()).into());
    }
    let domain_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if domain_dirs.len() < 2 {
        return Err(DatasetError::TooFewDomains {
            root: root.to_path_buf(),
            found: domain_dirs.len(),
        }
        .into());
    }

    let mut domains = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut skipped = Vec::new();
    let mut resolution = None;
    for dir in domain_dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut images = Vec::new();
        for path in sorted_entries(&dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
            match image::image_dimensions(&path) {
                Ok(dims) => {
                    resolution.get_or_insert(dims);
                    images.push(path);
                }
                Err(err) => {
                    log::warn!("skipping undecodable image {}: {err}", path.display());
                    skipped.push(path);
                }
            }
        }
        let held_out = test_count(images.len(), test_fraction);
        if images.len() <= held_out {
            return Err(DatasetError::EmptyDomain { domain: name }.into());
        }
        let test_split = images.split_off(images.len() - held_out);
        domains.push(name);
        train.push(images);
        test.push(test_split);
    }

    Ok(DomainDataset {
        root: root.to_path_buf(),
        domains,
        train,
        test,
        skipped,
        resolution: resolution.unwrap_or((0, 0)),
        cache: Mutex::new(HashMap::new()),
    })
}

impl DomainDataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn train_index(&self, domain: usize) -> &[PathBuf] {
        &self.train[domain]
    }

    pub fn test_index(&self, domain: usize) -> &[PathBuf] {
        &self.test[domain]
    }

    pub fn skipped(&self) -> &[PathBuf] {
        &self.skipped
    }

    /// Width and height of the first decodable image.
    pub fn sample_resolution(&self) -> (u32, u32) {
        self.resolution
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == name)
    }

    fn total_train(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    /// Decode and resize one image to `(3, size, size)` in `[-1, 1]`, memoized.
    pub fn load(&self, path: &Path, size: usize) -> Result<Tensor> {
        let key = (path.to_path_buf(), size);
        if let Some(t) = self.cache.lock().expect("image cache poisoned").get(&key) {
            return Ok(t.clone());
        }
        let tensor = load_image(path, size)?;
        self.cache
            .lock()
            .expect("image cache poisoned")
            .insert(key, tensor.clone());
        Ok(tensor)
    }

    /// Images of a whole split of one domain, resized, as 8-bit RGB.
    pub fn load_rgb_split(&self, domain: usize, train: bool, size: usize) -> Result<Vec<RgbImage>> {
        let paths = if train { &self.train[domain] } else { &self.test[domain] };
        paths
            .iter()
            .map(|p| Ok(to_rgb_image(&self.load(p, size)?)))
            .collect()
    }

    fn load_with_flip(&self, path: &Path, size: usize, flip: bool) -> Result<Tensor> {
        let t = self.load(path, size)?;
        Ok(if flip { flip_horizontal(&t) } else { t })
    }

    /// Sample `n` training images uniformly over all (domain, image) pairs.
    pub fn sample_train_batch(
        &self,
        n: usize,
        size: usize,
        streams: &mut TrainingStreams,
    ) -> Result<ImageBatch> {
        assert!(n >= 1, "batch size must be positive");
        let total = self.total_train();
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut sources = Vec::with_capacity(n);
        while images.len() < n {
            let mut attempts = 0;
            loop {
                let mut flat = streams.data.random_range(0..total);
                let mut domain = 0;
                while flat >= self.train[domain].len() {
                    flat -= self.train[domain].len();
                    domain += 1;
                }
                let flip = streams.flips.random_bool(0.5);
                let path = &self.train[domain][flat];
                match self.load_with_flip(path, size, flip) {
                    Ok(t) => {
                        images.push(t);
                        labels.push(domain);
                        sources.push((path.clone(), flip));
                        break;
                    }
                    Err(err) if attempts < MAX_DECODE_RETRIES => {
                        log::warn!("resampling after decode failure: {err}");
                        attempts += 1;
                    }
                    Err(err) => return Err(err),
                }
            }
        }
        Ok(ImageBatch {
            pixels: Tensor::stack(&images),
            labels,
            sources,
        })
    }

    /// Sample `n` pairs of distinct references sharing a uniformly drawn target domain.
    pub fn sample_reference_pair(
        &self,
        n: usize,
        size: usize,
        streams: &mut TrainingStreams,
    ) -> Result<ReferencePair> {
        for (domain, paths) in self.domains.iter().zip(&self.train) {
            if paths.len() < 2 {
                return Err(DatasetError::TooFewImages {
                    domain: domain.clone(),
                    needed: 2,
                    found: paths.len(),
                }
                .into());
            }
        }
        let k = self.num_domains();
        let mut first = (Vec::new(), Vec::new());
        let mut second = (Vec::new(), Vec::new());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let target = streams.targets.random_range(0..k);
            let picks = index::sample(&mut streams.data, self.train[target].len(), 2);
            for (slot, pick) in [(&mut first, picks.index(0)), (&mut second, picks.index(1))] {
                let flip = streams.flips.random_bool(0.5);
                let path = &self.train[target][pick];
                slot.0.push(self.load_with_flip(path, size, flip)?);
                slot.1.push((path.clone(), flip));
            }
            labels.push(target);
        }
        let batch = |(pixels, sources): (Vec<Tensor>, Vec<(PathBuf, bool)>)| ImageBatch {
            pixels: Tensor::stack(&pixels),
            labels: labels.clone(),
            sources,
        };
        Ok(ReferencePair {
            first: batch(first),
            second: batch(second),
            labels: labels.clone(),
        })
    }
}

/// Draw one target domain per source label.
pub fn sample_target_domains(
    sources: &[usize],
    num_domains: usize,
    exclude_source: bool,
    rng: &mut impl Rng,
) -> Vec<usize> {
    sources
        .iter()
        .map(|&src| {
            if exclude_source && num_domains > 1 {
                let t = rng.random_range(0..num_domains - 1);
                if t >= src {
                    t + 1
                } else {
                    t
                }
            } else {
                rng.random_range(0..num_domains)
            }
        })
        .collect()
}

/// `n` independent standard-normal latent codes as rows of an `(n, latent_dim)` tensor.
pub fn sample_latents(n: usize, latent_dim: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..n * latent_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(vec![n, latent_dim], data)
}

/// Decode an image file and resize it (bilinear) to `(3, size, size)` in `[-1, 1]`.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_rgb8();
    Ok(from_rgb_image(&resize_rgb(img, size)))
}

pub fn resize_rgb(img: RgbImage, size: usize) -> RgbImage {
    if img.width() as usize == size && img.height() as usize == size {
        img
    } else {
        image::imageops::resize(&img, size as u32, size as u32, FilterType::Triangle)
    }
}

/// 8-bit RGB to a `(3, h, w)` tensor in `[-1, 1]`.
pub fn from_rgb_image(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0 * 2.0 - 1.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

fn flip_horizontal(t: &Tensor) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut data = vec![0.0; src.len()];
    for row in 0..c * h {
        for x in 0..w {
            data[row * w + x] = src[row * w + (w - 1 - x)];
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// Clamp to `[-1, 1]`, map linearly onto `[0, 255]`, round half up.
pub fn denormalize(v: f64) -> u8 {
    let clamped = if v.is_nan() { -1.0 } else { v.clamp(-1.0, 1.0) };
    (clamped * 127.5 + 127.5 + 0.5).floor().min(255.0) as u8
}

/// A `(3, h, w)` tensor in `[-1, 1]` to 8-bit RGB.
pub fn to_rgb_image(t: &Tensor) -> RgbImage {
    assert_eq!(t.rank(), 3, "expected (3, h, w), got {:?}", t.shape());
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let data = t.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| denormalize(data[(c * h + y as usize) * w + x as usize]);
        image::Rgb([at(0), at(1), at(2)])
    })
}

/// Every element of an `(n, 3, h, w)` batch as 8-bit RGB.
pub fn batch_to_rgb(pixels: &Tensor) -> Vec<RgbImage> {
    (0..pixels.shape()[0])
        .map(|i| to_rgb_image(&pixels.index_first(i)))
        .collect()
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

pub mod synthetic {
    //! Procedural colored-shape datasets for tests and examples.
    //!
    //! Each domain has its own shape and base hue; within a domain, position,
    //! size, hue and background vary, which gives the model style to learn.

    use std::path::Path;

    use image::{Rgb, RgbImage};
    use rand::Rng;

    use crate::error::{Error, Result};
    use crate::rng::{stream, StreamId};

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Shape {
        Disc,
        Square,
        Triangle,
        Ring,
        Cross,
    }

    impl Shape {
        const ALL: [Shape; 5] = [Shape::Disc, Shape::Square, Shape::Triangle, Shape::Ring, Shape::Cross];

        fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
            match self {
                Shape::Disc => dx * dx + dy * dy <= r * r,
                Shape::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
                Shape::Triangle => dy <= r * 0.8 && dy >= -r && dx.abs() <= (dy + r) * 0.6,
                Shape::Ring => {
                    let d2 = dx * dx + dy * dy;
                    d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
                }
                Shape::Cross => {
                    (dx.abs() <= r * 0.3 && dy.abs() <= r) || (dy.abs() <= r * 0.3 && dx.abs() <= r)
                }
            }
        }
    }

    const BASE_COLORS: [[f64; 3]; 5] = [
        [220.0, 60.0, 50.0],
        [60.0, 190.0, 80.0],
        [60.0, 90.0, 220.0],
        [220.0, 200.0, 50.0],
        [180.0, 70.0, 200.0],
    ];

    /// Render one image of `domain`.
    pub fn render(domain: usize, size: u32, rng: &mut impl Rng) -> RgbImage {
        let shape = Shape::ALL[domain % Shape::ALL.len()];
        let base = BASE_COLORS[domain % BASE_COLORS.len()];
        let s = size as f64;
        let cx = s * rng.random_range(0.35..0.65);
        let cy = s * rng.random_range(0.35..0.65);
        let r = s * rng.random_range(0.18..0.32);
        let jitter: [f64; 3] = [
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
        ];
        let bg = rng.random_range(20.0..110.0);
        let bg_tint = rng.random_range(-15.0..15.0);
        RgbImage::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if shape.contains(dx, dy, r) {
                let px: Vec<u8> = (0..3)
                    .map(|c| (base[c] + jitter[c]).clamp(0.0, 255.0) as u8)
                    .collect();
                Rgb([px[0], px[1], px[2]])
            } else {
                let g = (bg + bg_tint * (y as f64 / s - 0.5)).clamp(0.0, 255.0) as u8;
                Rgb([g, g, g])
            }
        })
    }

    /// Write `root/domain_<k>/img_<i>.png` for `num_domains` domains.
    pub fn write_shapes_dataset(
        root: &Path,
        num_domains: usize,
        per_domain: usize,
        size: u32,
        seed: u64,
    ) -> Result<()> {
        let mut rng = stream(seed, StreamId::Data);
        for domain in 0..num_domains {
            let dir = root.join(format!("domain_{domain}"));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for i in 0..per_domain {
                let path = dir.join(format!("img_{i:04}.png"));
                render(domain, size, &mut rng)
                    .save(&path)
                    .map_err(|e| Error::image(&path, e))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    fn write_uniform(dir: &Path, name: &str, value: u8, size: u32) {
        std::fs::create_dir_all(dir).unwrap();
        RgbImage::from_pixel(size, size, image::Rgb([value, value, value]))
            .save(dir.join(name))
            .unwrap();
    }

    #[test]
    fn split_is_suffix_of_sorted_names() {
        let root = tempfile::tempdir().unwrap();
        synthetic::write_shapes_dataset(root.path(), 2, 10, 16, 1).unwrap();
        let ds = scan_dataset(root.path(), 0.2).unwrap();
        assert_eq!(ds.domains(), &["domain_0", "domain_1"]);
        for d in 0..2 {
            assert_eq!(ds.train_index(d).len(), 8);
            assert_eq!(ds.test_index(d).len(), 2);
            assert!(ds.test_index(d)[0].ends_with("img_0008.png"));
            assert!(ds.train_index(d).iter().all(|p| !ds.test_index(d).contains(p)));
        }
        let again = scan_dataset(root.path(), 0.2).unwrap();
        assert_eq!(again.train, ds.train);
        assert_eq!(again.test, ds.test);
        assert_eq!(ds.sample_resolution(), (16, 16));
    }

    #[test]
    fn scan_errors() {
        let root = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan_dataset(&root.path().join("missing"), 0.1),
            Err(Error::Dataset(DatasetError::PathNotFound(_)))
        ));
        write_uniform(&root.path().join("only"), "a.png", 10, 4);
        let err = scan_dataset(root.path(), 0.0).unwrap_err();
        assert!(err.to_string().contains("fewer than 2 domains"), "{err}");
        std::fs::create_dir_all(root.path().join("second")).unwrap();
        std::fs::write(root.path().join("second/broken.png"), b"not a png").unwrap();
        assert!(matches!(
            scan_dataset(root.path(), 0.0),
            Err(Error::Dataset(DatasetError::EmptyDomain { domain })) if domain == "second"
        ));
        write_uniform(&root.path().join("second"), "ok.png", 10, 4);
        let ds = scan_dataset(root.path(), 0.0).unwrap();
        assert_eq!(ds.skipped().len(), 1);
    }

    #[test]
    fn train_batches_are_seeded_and_labelled() {
        let root = tempfile::tempdir().unwrap();
        synthetic::write_shapes_dataset(root.path(), 2, 6, 12, 3).unwrap();
        let ds = scan_dataset(root.path(), 0.0).unwrap();
        let a = ds.sample_train_batch(4, 8, &mut TrainingStreams::new(5)).unwrap();
        let b = ds.sample_train_batch(4, 8, &mut TrainingStreams::new(5)).unwrap();
        assert_eq!(a.sources, b.sources);
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.pixels.shape(), &[4, 3, 8, 8]);
        assert!(a.pixels.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for ((path, _), &label) in a.sources.iter().zip(&a.labels) {
            assert!(path.starts_with(root.path().join(&ds.domains()[label])));
        }
    }

    #[test]
    fn white_image_scales_to_one() {
        let root = tempfile::tempdir().unwrap();
        write_uniform(&root.path().join("a"), "w.png", 255, 5);
        write_uniform(&root.path().join("b"), "w.png", 255, 5);
        let ds = scan_dataset(root.path(), 0.0).unwrap();
        let batch = ds.sample_train_batch(1, 8, &mut TrainingStreams::new(0)).unwrap();
        assert!(batch.pixels.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn reference_pairs_share_domains_and_differ_in_images() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path();
        write_uniform(&dir.join("a"), "1.png", 10, 4);
        write_uniform(&dir.join("a"), "2.png", 20, 4);
        write_uniform(&dir.join("b"), "1.png", 30, 4);
        write_uniform(&dir.join("b"), "2.png", 40, 4);
        write_uniform(&dir.join("b"), "3.png", 50, 4);
        let ds = scan_dataset(dir, 0.0).unwrap();
        let pair = ds.sample_reference_pair(16, 4, &mut TrainingStreams::new(2)).unwrap();
        assert_eq!(pair.first.labels, pair.second.labels);
        assert_eq!(pair.first.labels, pair.labels);
        for i in 0..16 {
            assert_ne!(pair.first.sources[i].0, pair.second.sources[i].0);
            if pair.labels[i] == 0 {
                let mut names = [&pair.first.sources[i].0, &pair.second.sources[i].0];
                names.sort();
                assert!(names[0].ends_with("a/1.png") && names[1].ends_with("a/2.png"));
            }
        }
        write_uniform(&dir.join("c"), "1.png", 60, 4);
        let ds = scan_dataset(dir, 0.0).unwrap();
        let err = ds.sample_reference_pair(1, 4, &mut TrainingStreams::new(2)).unwrap_err();
        assert!(err.to_string().contains("`c`"), "{err}");
    }

    #[test]
    fn latents_are_standard_normal() {
        let mut rng = stream(42, StreamId::Latents);
        let z = sample_latents(100_000, 16, &mut rng);
        for d in 0..16 {
            let col: Vec<f64> = (0..100_000).map(|i| z.data()[i * 16 + d]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
        let again = sample_latents(3, 16, &mut stream(42, StreamId::Latents));
        assert_eq!(again.data(), &z.data()[..48]);
        assert_eq!(sample_latents(0, 16, &mut rng).numel(), 0);
    }

    #[test]
    fn target_sampling_respects_exclusion() {
        let mut rng = stream(1, StreamId::Targets);
        let sources = vec![0, 1, 2, 1, 0, 2, 2, 1];
        for _ in 0..50 {
            let t = sample_target_domains(&sources, 3, true, &mut rng);
            assert!(t.iter().zip(&sources).all(|(a, b)| a != b));
        }
        let t = sample_target_domains(&vec![0; 400], 3, false, &mut rng);
        assert!(t.contains(&0) && t.contains(&1) && t.contains(&2));
    }

    #[test]
    fn denormalize_endpoints_and_rounding() {
        assert_eq!(denormalize(-1.0), 0);
        assert_eq!(denormalize(1.0), 255);
        assert_eq!(denormalize(0.0), 128);
        assert_eq!(denormalize(1.7), 255);
        assert_eq!(denormalize(-3.0), 0);
    }

    #[test]
    fn rgb_round_trip_is_exact_on_8_bit_values() {
        let img = synthetic::render(1, 9, &mut stream(0, StreamId::Data));
        assert_eq!(to_rgb_image(&from_rgb_image(&img)), img);
    }
}
