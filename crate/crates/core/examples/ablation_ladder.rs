//! Train each rung of the ablation ladder on the same data and seed, then
//! compare latent diversity (mean pixel L1 between outputs for two latents).
//!
//! Usage: `cargo run --release --example ablation_ladder -- [iterations] [rungs]`
//! e.g. `ablation_ladder 200 bcdef`.

use std::time::Instant;

use anyhow::Result;
use stylebridge::config::{default_config, AblationRung, Preset};
use stylebridge::data::{scan_dataset, synthetic};
use stylebridge::evaluation::latent_diversity;
use stylebridge::rng::{stream, StreamId};
use stylebridge::training::{fit, FitOptions, Trainer};
use stylebridge_autograd::Tensor;

fn main() -> Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let rungs = args
        .next()
        .unwrap_or_else(|| "bcdef".into())
        .chars()
        .map(|c| c.to_string().parse::<AblationRung>())
        .collect::<Result<Vec<_>, _>>()?;

    let data = tempfile::tempdir()?;
    synthetic::write_shapes_dataset(data.path(), 3, 40, 32, 1)?;
    let dataset = scan_dataset(data.path(), 0.1)?;
    let k = dataset.num_domains();

    let mut base = default_config(Preset::Toy);
    base.num_domains = k;
    base.total_iters = iters;
    base.ds_decay_iters = iters;

    // One held-out image per domain, each translated into the next domain.
    let probes = (0..k)
        .map(|d| dataset.load(&dataset.test_index(d)[0], base.image_size))
        .collect::<Result<Vec<_>, _>>()?;
    let probes = Tensor::stack(&probes);
    let targets: Vec<usize> = (0..k).map(|d| (d + 1) % k).collect();

    for rung in rungs {
        let cfg = rung.apply(&base);
        cfg.validate()?;
        let start = Instant::now();
        let mut trainer = Trainer::new(&cfg, dataset.domains().to_vec());
        let mut last = None;
        fit(&mut trainer, &dataset, &FitOptions::default(), |r| last = Some(r.clone()))?;
        let mut rng = stream(cfg.seed, StreamId::Evaluation);
        let diversity = latent_diversity(&trainer.bundle, &probes, &targets, 20, &mut rng)?;
        let last = last.expect("at least one iteration");
        println!(
            "({}) diversity {:.5}  cyc {:.4}  real {:.3}  {:.0}s",
            rung.letter(),
            diversity,
            last.cyc,
            last.real_score,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
