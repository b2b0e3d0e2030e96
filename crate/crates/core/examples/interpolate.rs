//! Walk between two sampled styles of one target domain and save every frame
//! side by side, one row per source image.
//!
//! Usage: `cargo run --release --example interpolate -- [out.png] [steps] [checkpoint]`

use std::path::PathBuf;

use anyhow::Result;
use image::RgbImage;
use stylebridge::checkpoint::load_checkpoint;
use stylebridge::config::{default_config, Preset};
use stylebridge::data::{sample_latents, save_png, scan_dataset, synthetic, to_rgb_image};
use stylebridge::rng::{stream, StreamId};
use stylebridge::synthesis::{code_for_latent, interpolate_styles};
use stylebridge::training::{fit, FitOptions, Trainer};
use stylebridge_autograd::Tensor;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "interpolation.png".into()));
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let checkpoint = args.next().map(PathBuf::from);

    let data = tempfile::tempdir()?;
    synthetic::write_shapes_dataset(data.path(), 3, 20, 32, 1)?;
    let dataset = scan_dataset(data.path(), 0.2)?;
    let bundle = match checkpoint {
        Some(path) => load_checkpoint(&path)?.bundle,
        None => {
            let mut cfg = default_config(Preset::Toy);
            cfg.num_domains = dataset.num_domains();
            cfg.total_iters = 20;
            cfg.ds_decay_iters = 20;
            let mut trainer = Trainer::new(&cfg, dataset.domains().to_vec());
            fit(&mut trainer, &dataset, &FitOptions::default(), |_| {})?;
            trainer.bundle
        }
    };
    let size = bundle.cfg.image_size;
    let sources = Tensor::stack(
        &dataset.test_index(0).iter().map(|p| dataset.load(p, size)).collect::<Result<Vec<_>, _>>()?,
    );
    let n = sources.shape()[0];

    let target = 2;
    let z = sample_latents(2, bundle.cfg.latent_dim, &mut stream(7, StreamId::Latents));
    let codes = code_for_latent(&bundle, &z, &[target, target])?;
    let dim = codes.shape()[1];
    let a = codes.index_first(0).reshape(&[1, dim]).broadcast_to(&[n, dim]);
    let b = codes.index_first(1).reshape(&[1, dim]).broadcast_to(&[n, dim]);
    let frames = interpolate_styles(&bundle, &sources, &a, &b, steps)?;

    let mut strip = RgbImage::new((steps * size) as u32, (n * size) as u32);
    for (t, frame) in frames.iter().enumerate() {
        for i in 0..n {
            let img = to_rgb_image(&frame.index_first(i));
            image::imageops::replace(&mut strip, &img, (t * size) as i64, (i * size) as i64);
        }
    }
    save_png(&strip, &out)?;
    println!("wrote {} ({steps} frames × {n} sources)", out.display());
    Ok(())
}
