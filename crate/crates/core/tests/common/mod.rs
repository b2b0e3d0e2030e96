#![allow(dead_code)]

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stylebridge::config::{default_config, ExperimentConfig, Preset};
use stylebridge::data::{scan_dataset, synthetic, DomainDataset};
use stylebridge_autograd::Tensor;

/// Colored-shape domains written under `root` and scanned with `test_fraction`.
pub fn shapes_dataset(root: &Path, domains: usize, per_domain: usize, size: u32, test_fraction: f64) -> DomainDataset {
    synthetic::write_shapes_dataset(root, domains, per_domain, size, 1).expect("write dataset");
    scan_dataset(root, test_fraction).expect("scan dataset")
}

/// The toy preset shrunk to 16×16 with narrow layers, for quick end-to-end tests.
pub fn tiny_config(domains: usize) -> ExperimentConfig {
    let mut cfg = default_config(Preset::Toy);
    cfg.num_domains = domains;
    cfg.image_size = 16;
    cfg.base_channels = 4;
    cfg.max_channels = 8;
    cfg.resample_blocks = 2;
    cfg.hidden_dim = 16;
    cfg.style_dim = 8;
    cfg.latent_dim = 4;
    cfg.batch_size = 2;
    cfg.total_iters = 6;
    cfg.ds_decay_iters = 6;
    cfg
}

pub fn tiny_config_text(domains: usize) -> String {
    tiny_config(domains).to_config_string()
}

pub fn normal(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
}

/// Every file under `dir` (recursively) with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).expect("read file")));
            }
        }
    }
    out.sort();
    out
}
