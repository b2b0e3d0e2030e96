//! Scan a folder-per-domain dataset and print the deterministic train/test split.
//! Without an argument, a small colored-shapes dataset is generated first.
//!
//! Usage: `cargo run --example dataset_check -- [dataset_root] [test_fraction]`

use anyhow::Result;
use stylebridge::data::{scan_dataset, synthetic};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let generated = tempfile::tempdir()?;
    let root = match args.next() {
        Some(path) => path.into(),
        None => {
            synthetic::write_shapes_dataset(generated.path(), 3, 20, 32, 1)?;
            generated.path().to_path_buf()
        }
    };
    let test_fraction: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.1);

    let dataset = scan_dataset(&root, test_fraction)?;
    let (w, h) = dataset.sample_resolution();
    println!("{} domains under {} ({w}x{h} sample)", dataset.num_domains(), dataset.root().display());
    for (d, name) in dataset.domains().iter().enumerate() {
        let test = dataset.test_index(d);
        println!(
            "  {name}: {} train, {} test (first held out: {})",
            dataset.train_index(d).len(),
            test.len(),
            test.first().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into())
        );
    }
    for path in dataset.skipped() {
        println!("  skipped unreadable {}", path.display());
    }
    Ok(())
}
