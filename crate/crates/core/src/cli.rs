//! The `stylebridge` command line: dataset-check, train, generate, evaluate.
//!
//! Exit codes: 0 success, 2 usage/config/data error, 3 numerical abort.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stylebridge_autograd::Tensor;

use crate::checkpoint::load_checkpoint_for;
use crate::config::{load_config, Preset};
use crate::data::{load_image, sample_latents, save_png, scan_dataset, to_rgb_image, DomainDataset};
use crate::error::{Error, Result};
use crate::evaluation::{fid_protocol, lpips_protocol, EvalMode, FeatureExtractor, RandomConvExtractor};
use crate::rng::{stream, StreamId};
use crate::synthesis::{
    code_for_latent, code_for_reference, interpolate_styles, render_grid, write_manifest, CellRecord, ColumnHeader,
    GridManifest, StyleColumn,
};
use crate::training::{fit, FitOptions, ModelBundle, Trainer, CHECKPOINT_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable supplying the default `--data` root.
pub const DATA_ENV: &str = "STYLEBRIDGE_DATA";

#[derive(Debug, Parser)]
#[command(name = "stylebridge", version, about = "Multi-domain style-conditioned image translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan a dataset root and print per-domain counts.
    DatasetCheck(DataArgs),
    /// Train (or resume training) a model.
    Train(TrainArgs),
    /// Translate images with a trained checkpoint.
    Generate(GenerateArgs),
    /// Compute FID or perceptual diversity for a checkpoint.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset root with one sub-folder per domain.
    #[arg(long, env = DATA_ENV)]
    data: PathBuf,
    /// Fraction of each domain held out as the test split.
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key = value` configuration file layered over the preset.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for checkpoints, losses and sample grids.
    #[arg(long)]
    out: PathBuf,
    /// Preset supplying defaults for keys the file leaves out.
    #[arg(long, default_value = "toy")]
    preset: String,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the `total_iters` key.
    #[arg(long)]
    iters: Option<usize>,
    /// Stop (with a checkpoint) before this iteration.
    #[arg(long)]
    stop_at: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GenerateMode {
    Latent,
    Reference,
    Interpolate,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    mode: GenerateMode,
    /// Source images (one grid row each).
    #[arg(long, num_args = 1.., required = true)]
    src: Vec<PathBuf>,
    /// Reference images (reference mode; one grid column each).
    #[arg(long = "ref", num_args = 1..)]
    refs: Vec<PathBuf>,
    /// Target domain name.
    #[arg(long)]
    domain: String,
    /// Seed for latent sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Latent styles per grid (latent mode).
    #[arg(long, default_value_t = 5)]
    count: usize,
    /// Frames per interpolation.
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Metric {
    Fid,
    Lpips,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long, default_value = "latent")]
    mode: EvalMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extractor weights (safetensors); defaults to a fixed-seed random CNN.
    #[arg(long)]
    extractor: Option<PathBuf>,
    /// Where to write the metrics JSON.
    #[arg(long)]
    out: PathBuf,
}

impl clap::builder::ValueParserFactory for EvalMode {
    type Parser = clap::builder::ValueParser;

    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<EvalMode>().map_err(|e| e.to_string()))
    }
}

/// Parse `args` (including the program name) and run the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::DatasetCheck(a) => cmd_dataset_check(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// The stable exit code for an error.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::NonFinite { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn cmd_dataset_check(args: &DataArgs) -> Result<()> {
    let ds = scan_dataset(&args.data, args.test_fraction)?;
    let (w, h) = ds.sample_resolution();
    println!("root: {}", ds.root().display());
    println!("domains: {}", ds.num_domains());
    for (d, name) in ds.domains().iter().enumerate() {
        println!("{name}: train {} test {}", ds.train_index(d).len(), ds.test_index(d).len());
    }
    println!("sample resolution: {w}x{h}");
    if !ds.skipped().is_empty() {
        println!("skipped {} unreadable files", ds.skipped().len());
    }
    Ok(())
}

fn parse_overrides(args: &TrainArgs) -> Result<BTreeMap<String, String>> {
    let mut overrides = BTreeMap::new();
    for item in &args.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{item}`")))?;
        overrides.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(seed) = args.seed {
        overrides.insert("seed".into(), seed.to_string());
    }
    if let Some(iters) = args.iters {
        overrides.insert("total_iters".into(), iters.to_string());
    }
    Ok(overrides)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let preset: Preset = args.preset.parse()?;
    let cfg = load_config(&args.config, preset, &parse_overrides(args)?)?;
    let ds = scan_dataset(&args.data.data, args.data.test_fraction)?;
    if ds.num_domains() != cfg.num_domains {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} domains but num_domains = {}",
            ds.num_domains(),
            cfg.num_domains
        )));
    }
    let mut trainer = match &args.resume {
        Some(path) => {
            let t = load_checkpoint_for(path, &cfg)?;
            check_domain_names(&t.bundle, &ds)?;
            log::info!("resuming from {} at iteration {}", path.display(), t.bundle.iteration);
            t
        }
        None => Trainer::new(&cfg, ds.domains().to_vec()),
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let cfg_path = args.out.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_config_string()).map_err(|e| Error::io(&cfg_path, e))?;
    let options = FitOptions {
        out_dir: Some(args.out.clone()),
        stop_at: args.stop_at,
    };
    fit(&mut trainer, &ds, &options, |_| {})?;
    println!(
        "trained to iteration {}; checkpoint {}",
        trainer.bundle.iteration,
        args.out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn check_domain_names(bundle: &ModelBundle, ds: &DomainDataset) -> Result<()> {
    if bundle.domains != ds.domains() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint domains [{}] differ from dataset domains [{}]",
            bundle.domains.join(", "),
            ds.domains().join(", ")
        )));
    }
    Ok(())
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    Ok(crate::checkpoint::load_checkpoint(path)?.bundle)
}

fn domain_label(bundle: &ModelBundle, name: &str) -> Result<usize> {
    bundle.domains.iter().position(|d| d == name).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "unknown domain `{name}`; valid domains: {}",
            bundle.domains.join(", ")
        ))
    })
}

fn load_images(paths: &[PathBuf], size: usize) -> Result<Tensor> {
    let images = paths.iter().map(|p| load_image(p, size)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&images))
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let bundle = load_bundle(&args.checkpoint)?;
    let target = domain_label(&bundle, &args.domain)?;
    let size = bundle.cfg.image_size;
    let sources = load_images(&args.src, size)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut rng = stream(args.seed, StreamId::Latents);
    let source_names: Vec<String> = args.src.iter().map(|p| p.display().to_string()).collect();
    let cell = |row: usize, col: usize, style: String| CellRecord {
        row,
        col,
        source: source_names[row - 1].clone(),
        style,
        target_domain: args.domain.clone(),
    };

    match args.mode {
        GenerateMode::Latent | GenerateMode::Reference => {
            let (columns, styles): (Vec<StyleColumn>, Vec<String>) = if args.mode == GenerateMode::Latent {
                if args.count == 0 {
                    return Err(Error::InvalidArgument("--count must be at least 1".into()));
                }
                let z = sample_latents(args.count, bundle.cfg.latent_dim, &mut rng);
                let codes = code_for_latent(&bundle, &z, &vec![target; args.count])?;
                (0..args.count)
                    .map(|j| {
                        let col = StyleColumn {
                            header: ColumnHeader::Latent,
                            code: codes.index_first(j),
                        };
                        (col, format!("seed:{}/index:{j}", args.seed))
                    })
                    .unzip()
            } else {
                if args.refs.is_empty() {
                    return Err(Error::InvalidArgument("reference mode needs at least one --ref".into()));
                }
                let refs = load_images(&args.refs, size)?;
                let codes = code_for_reference(&bundle, &refs, &vec![target; args.refs.len()])?;
                (0..args.refs.len())
                    .map(|j| {
                        let col = StyleColumn {
                            header: ColumnHeader::Reference(refs.index_first(j)),
                            code: codes.index_first(j),
                        };
                        (col, args.refs[j].display().to_string())
                    })
                    .unzip()
            };
            let grid = render_grid(&bundle, &sources, &columns)?;
            let name = if args.mode == GenerateMode::Latent { "latent" } else { "reference" };
            let image = format!("{name}.png");
            save_png(&grid, &args.out.join(&image))?;
            let cells = (1..=args.src.len())
                .flat_map(|r| styles.iter().enumerate().map(move |(j, s)| (r, j + 1, s.clone())))
                .map(|(r, c, s)| cell(r, c, s))
                .collect();
            write_manifest(
                &GridManifest {
                    mode: name.into(),
                    image,
                    cells,
                },
                &args.out.join(format!("{name}.json")),
            )?;
        }
        GenerateMode::Interpolate => {
            let n = args.src.len();
            let z = sample_latents(2, bundle.cfg.latent_dim, &mut rng);
            let codes = code_for_latent(&bundle, &z, &[target, target])?;
            let dim = codes.shape()[1];
            let a = codes.index_first(0).reshape(&[1, dim]).broadcast_to(&[n, dim]);
            let b = codes.index_first(1).reshape(&[1, dim]).broadcast_to(&[n, dim]);
            let frames = interpolate_styles(&bundle, &sources, &a, &b, args.steps)?;
            let mut records = Vec::new();
            for (t, frame) in frames.iter().enumerate() {
                for i in 0..n {
                    let file = format!("src{i:02}_frame{t:03}.png");
                    save_png(&to_rgb_image(&frame.index_first(i)), &args.out.join(&file))?;
                    records.push(FrameRecord {
                        image: file,
                        source: source_names[i].clone(),
                        step: t,
                        t: t as f64 / (args.steps - 1) as f64,
                    });
                }
            }
            let manifest = InterpolationManifest {
                seed: args.seed,
                target_domain: args.domain.clone(),
                frames: records,
            };
            let path = args.out.join("interpolate.json");
            let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FrameRecord {
    image: String,
    source: String,
    step: usize,
    t: f64,
}

#[derive(Serialize)]
struct InterpolationManifest {
    seed: u64,
    target_domain: String,
    frames: Vec<FrameRecord>,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let bundle = load_bundle(&args.checkpoint)?;
    let ds = scan_dataset(&args.data.data, args.data.test_fraction)?;
    check_domain_names(&bundle, &ds)?;
    let extractor = match &args.extractor {
        Some(path) => RandomConvExtractor::load(path)?,
        None => RandomConvExtractor::new(0, bundle.cfg.image_size),
    };
    let extractor: &dyn FeatureExtractor = &extractor;
    let report = match args.metric {
        Metric::Fid => fid_protocol(&bundle, &ds, args.mode, extractor, args.seed)?,
        Metric::Lpips => lpips_protocol(&bundle, &ds, args.mode, extractor, args.seed)?,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&args.out, report.to_json()).map_err(|e| Error::io(&args.out, e))?;
    println!("{} ({}) mean: {:.6}", report.metric, report.mode.name(), report.mean);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_subcommand() {
        let ok = |args: &[&str]| Cli::try_parse_from(args).unwrap();
        ok(&["sb", "dataset-check", "--data", "d"]);
        ok(&["sb", "train", "--config", "c", "--data", "d", "--out", "o", "--set", "seed=3"]);
        ok(&["sb", "generate", "--checkpoint", "c", "--mode", "latent", "--src", "a.png", "b.png", "--domain", "x", "--out", "o"]);
        ok(&["sb", "evaluate", "--checkpoint", "c", "--data", "d", "--metric", "lpips", "--mode", "reference", "--out", "m.json"]);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["sb", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["sb", "train", "--data", "d"]), EXIT_USAGE);
        assert_eq!(run(["sb", "--help"]), EXIT_OK);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::NonFinite { term: "adv" }), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_USAGE);
    }

    #[test]
    fn dataset_check_missing_path() {
        assert_eq!(run(["sb", "dataset-check", "--data", "/nonexistent/stylebridge"]), EXIT_USAGE);
    }
}
