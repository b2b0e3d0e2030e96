//! Train the toy preset on a generated colored-shapes dataset and print the loss trace.
//!
//! Usage: `cargo run --release --example train_toy -- [iterations] [out_dir]`

use std::time::Instant;

use anyhow::Result;
use stylebridge::config::{default_config, Preset};
use stylebridge::data::{scan_dataset, synthetic};
use stylebridge::training::{fit, FitOptions, Trainer};

fn main() -> Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let out = args.next().map(std::path::PathBuf::from);

    let data = tempfile::tempdir()?;
    synthetic::write_shapes_dataset(data.path(), 3, 40, 32, 1)?;
    let dataset = scan_dataset(data.path(), 0.1)?;

    let mut cfg = default_config(Preset::Toy);
    cfg.num_domains = dataset.num_domains();
    cfg.total_iters = iters;
    cfg.ds_decay_iters = iters;
    cfg.validate()?;

    let mut trainer = Trainer::new(&cfg, dataset.domains().to_vec());
    let start = Instant::now();
    let options = FitOptions {
        out_dir: out,
        ..Default::default()
    };
    fit(&mut trainer, &dataset, &options, |r| {
        if r.mode == "latent" && (r.iter % 10 == 0 || r.iter + 1 == iters) {
            println!(
                "iter {:4}  d {:.3}  r1 {:.4}  g {:.3}  sty {:.3}  ds {:.4}  cyc {:.4}  real {:.3}  {:.1}s",
                r.iter,
                r.total_d,
                r.r1,
                r.total_g,
                r.sty,
                r.ds,
                r.cyc,
                r.real_score,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    println!("{} iterations in {:.1}s", iters, start.elapsed().as_secs_f64());
    Ok(())
}
