//! Latent-guided and reference-guided translation grids from a checkpoint, or
//! from a toy model trained for a few iterations when no checkpoint is given.
//!
//! Usage: `cargo run --release --example translate_grids -- [out_dir] [checkpoint]`

use std::path::PathBuf;

use anyhow::Result;
use stylebridge::checkpoint::load_checkpoint;
use stylebridge::config::{default_config, Preset};
use stylebridge::data::{sample_latents, save_png, scan_dataset, synthetic, DomainDataset};
use stylebridge::rng::{stream, StreamId};
use stylebridge::synthesis::{code_for_latent, code_for_reference, render_grid, ColumnHeader, StyleColumn};
use stylebridge::training::{fit, FitOptions, ModelBundle, Trainer};
use stylebridge_autograd::Tensor;

fn quick_model(dataset: &DomainDataset, checkpoint: Option<PathBuf>) -> Result<ModelBundle> {
    if let Some(path) = checkpoint {
        return Ok(load_checkpoint(&path)?.bundle);
    }
    let mut cfg = default_config(Preset::Toy);
    cfg.num_domains = dataset.num_domains();
    cfg.total_iters = 20;
    cfg.ds_decay_iters = 20;
    let mut trainer = Trainer::new(&cfg, dataset.domains().to_vec());
    fit(&mut trainer, dataset, &FitOptions::default(), |_| {})?;
    Ok(trainer.bundle)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "grids".into()));
    let checkpoint = args.next().map(PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let data = tempfile::tempdir()?;
    synthetic::write_shapes_dataset(data.path(), 3, 20, 32, 1)?;
    let dataset = scan_dataset(data.path(), 0.2)?;
    let bundle = quick_model(&dataset, checkpoint)?;
    let size = bundle.cfg.image_size;

    // Rows: the held-out images of domain 0. Target: domain 1.
    let target = 1;
    let sources = Tensor::stack(
        &dataset.test_index(0).iter().map(|p| dataset.load(p, size)).collect::<Result<Vec<_>, _>>()?,
    );

    let z = sample_latents(4, bundle.cfg.latent_dim, &mut stream(0, StreamId::Latents));
    let codes = code_for_latent(&bundle, &z, &[target; 4])?;
    let columns: Vec<StyleColumn> = (0..4)
        .map(|j| StyleColumn {
            header: ColumnHeader::Latent,
            code: codes.index_first(j),
        })
        .collect();
    save_png(&render_grid(&bundle, &sources, &columns)?, &out.join("latent.png"))?;

    let refs = Tensor::stack(
        &dataset.test_index(target).iter().map(|p| dataset.load(p, size)).collect::<Result<Vec<_>, _>>()?,
    );
    let n = refs.shape()[0];
    let codes = code_for_reference(&bundle, &refs, &vec![target; n])?;
    let columns: Vec<StyleColumn> = (0..n)
        .map(|j| StyleColumn {
            header: ColumnHeader::Reference(refs.index_first(j)),
            code: codes.index_first(j),
        })
        .collect();
    save_png(&render_grid(&bundle, &sources, &columns)?, &out.join("reference.png"))?;
    println!("wrote {}/latent.png and {}/reference.png", out.display(), out.display());
    Ok(())
}
