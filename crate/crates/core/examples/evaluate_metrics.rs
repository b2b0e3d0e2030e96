//! Fréchet distance and perceptual diversity of a model on the held-out split,
//! in both latent-guided and reference-guided modes.
//!
//! Usage: `cargo run --release --example evaluate_metrics -- [train_iterations] [checkpoint]`

use anyhow::Result;
use stylebridge::checkpoint::load_checkpoint;
use stylebridge::config::{default_config, Preset};
use stylebridge::data::{scan_dataset, synthetic};
use stylebridge::evaluation::{fid_protocol, lpips_protocol, EvalMode, RandomConvExtractor};
use stylebridge::training::{fit, FitOptions, Trainer};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let checkpoint = args.next();

    let data = tempfile::tempdir()?;
    synthetic::write_shapes_dataset(data.path(), 2, 30, 32, 1)?;
    let dataset = scan_dataset(data.path(), 0.1)?;
    let bundle = match checkpoint {
        Some(path) => load_checkpoint(path.as_ref())?.bundle,
        None => {
            let mut cfg = default_config(Preset::Toy);
            cfg.num_domains = dataset.num_domains();
            cfg.total_iters = iters;
            cfg.ds_decay_iters = iters;
            let mut trainer = Trainer::new(&cfg, dataset.domains().to_vec());
            fit(&mut trainer, &dataset, &FitOptions::default(), |_| {})?;
            trainer.bundle
        }
    };

    let extractor = RandomConvExtractor::new(0, bundle.cfg.image_size);
    for mode in [EvalMode::Latent, EvalMode::Reference] {
        let fid = fid_protocol(&bundle, &dataset, mode, &extractor, 0)?;
        let lpips = lpips_protocol(&bundle, &dataset, mode, &extractor, 0)?;
        println!("{} mode", mode.name());
        for (pair, value) in &fid.per_pair {
            println!("  {pair}: fid {value:.4}  diversity {:.4}", lpips.per_pair[pair]);
        }
        println!("  mean: fid {:.4}  diversity {:.4}", fid.mean, lpips.mean);
    }
    Ok(())
}
