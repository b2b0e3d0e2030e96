//! Inference with the moving-average networks: latent- and reference-guided
//! translation, style interpolation and image grids.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use stylebridge_autograd::{Tape, Tensor};

use crate::data::{save_png, to_rgb_image, DomainDataset};
use crate::error::{Error, Result};
use crate::networks::{code_from_latent, code_from_reference};
use crate::rng::{stream, StreamId};
use crate::training::ModelBundle;

fn check_targets(bundle: &ModelBundle, targets: &[usize]) -> Result<()> {
    let k = bundle.cfg.num_domains;
    match targets.iter().find(|&&y| y >= k) {
        Some(&label) => Err(Error::LabelOutOfRange {
            label,
            num_domains: k,
        }),
        None => Ok(()),
    }
}

/// Generator codes for latents `z: [n, latent_dim]` in domains `targets`.
pub fn code_for_latent(bundle: &ModelBundle, z: &Tensor, targets: &[usize]) -> Result<Tensor> {
    check_targets(bundle, targets)?;
    let tape = Tape::new();
    let bf = bundle.ema.mapping.params().bind(&tape, false);
    let code = code_from_latent(
        bundle.cfg.ablation.recon_mode,
        &bundle.ema.mapping,
        &bf,
        tape.constant(z.clone()),
        targets,
    )?;
    Ok(code.value())
}

/// Generator codes extracted from reference images `[n, 3, S, S]` for domains `targets`.
pub fn code_for_reference(bundle: &ModelBundle, refs: &Tensor, targets: &[usize]) -> Result<Tensor> {
    check_targets(bundle, targets)?;
    let tape = Tape::new();
    let be = bundle.ema.encoder.params().bind(&tape, false);
    let code = code_from_reference(
        bundle.cfg.ablation.recon_mode,
        &bundle.ema.encoder,
        &be,
        tape.constant(refs.clone()),
        targets,
    )?;
    Ok(code.value())
}

/// `G_ema(x, code)`.
pub fn translate_with_code(bundle: &ModelBundle, x: &Tensor, code: &Tensor) -> Result<Tensor> {
    bundle.ema.generator.eval(x, code)
}

/// `G_ema(x, F_ema,y(z))` row by row.
pub fn translate_latent(bundle: &ModelBundle, x: &Tensor, targets: &[usize], z: &Tensor) -> Result<Tensor> {
    let code = code_for_latent(bundle, z, targets)?;
    translate_with_code(bundle, x, &code)
}

/// `G_ema(x, E_ema,y(x_ref))` row by row.
pub fn translate_reference(
    bundle: &ModelBundle,
    x: &Tensor,
    refs: &Tensor,
    targets: &[usize],
) -> Result<Tensor> {
    let code = code_for_reference(bundle, refs, targets)?;
    translate_with_code(bundle, x, &code)
}

/// Translate `x` with `steps` codes spaced evenly on the segment from `a` to `b`.
///
/// `x` is `[n, 3, S, S]`; `a` and `b` are `[n, code_dim]`. Returns one batch per step.
pub fn interpolate_styles(
    bundle: &ModelBundle,
    x: &Tensor,
    a: &Tensor,
    b: &Tensor,
    steps: usize,
) -> Result<Vec<Tensor>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    if a.shape() != b.shape() {
        return Err(Error::shape("interpolation endpoints", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let code = if i == 0 {
                a.clone()
            } else if i + 1 == steps {
                b.clone()
            } else {
                a.zip_map(b, |a, b| a + t * (b - a))
            };
            translate_with_code(bundle, x, &code)
        })
        .collect()
}

/// What the header cell of a grid column shows.
#[derive(Clone, Debug)]
pub enum ColumnHeader {
    /// The reference image, `[3, S, S]`.
    Reference(Tensor),
    /// A stripe pattern drawn from the code values.
    Latent,
}

/// One grid column: a header and the code applied to every source.
#[derive(Clone, Debug)]
pub struct StyleColumn {
    pub header: ColumnHeader,
    /// `[code_dim]` or `[1, code_dim]`.
    pub code: Tensor,
}

const CORNER_GRAY: u8 = 128;

fn code_barcode(code: &Tensor, size: usize) -> RgbImage {
    let values = code.data();
    let n = values.len().max(1);
    RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let v = values[(x as usize * n / size).min(n - 1)];
        let g = ((v.tanh() * 0.5 + 0.5) * 255.0).round() as u8;
        // Lower half encodes the sign, so codes of equal magnitude stay distinguishable.
        if (y as usize) < size * 3 / 4 {
            Rgb([g, g, g])
        } else if v >= 0.0 {
            Rgb([230, 120, 40])
        } else {
            Rgb([40, 120, 230])
        }
    })
}

fn blit(dst: &mut RgbImage, src: &RgbImage, row: usize, col: usize, size: usize) {
    for (x, y, px) in src.enumerate_pixels() {
        dst.put_pixel((col * size) as u32 + x, (row * size) as u32 + y, *px);
    }
}

/// Sources down the first column, style headers along the first row, and the
/// translation of source `i` with column `j`'s code at cell `(i + 1, j + 1)`.
pub fn render_grid(bundle: &ModelBundle, sources: &Tensor, columns: &[StyleColumn]) -> Result<RgbImage> {
    if columns.is_empty() {
        return Err(Error::InvalidArgument("grid needs at least one style column".into()));
    }
    let n = sources.shape()[0];
    if n == 0 {
        return Err(Error::InvalidArgument("grid needs at least one source image".into()));
    }
    let size = bundle.cfg.image_size;
    if sources.shape()[2] != size || sources.shape()[3] != size {
        return Err(Error::shape("grid sources", format!("[n, 3, {size}, {size}]"), format!("{:?}", sources.shape())));
    }
    let mut grid = RgbImage::from_pixel(
        ((columns.len() + 1) * size) as u32,
        ((n + 1) * size) as u32,
        Rgb([CORNER_GRAY; 3]),
    );
    for i in 0..n {
        blit(&mut grid, &to_rgb_image(&sources.index_first(i)), i + 1, 0, size);
    }
    let code_dim = bundle.ema.generator.code_dim();
    for (j, column) in columns.iter().enumerate() {
        let header = match &column.header {
            ColumnHeader::Reference(img) => to_rgb_image(img),
            ColumnHeader::Latent => code_barcode(&column.code, size),
        };
        blit(&mut grid, &header, 0, j + 1, size);
        let code = column.code.reshape(&[1, code_dim]).broadcast_to(&[n, code_dim]);
        let out = translate_with_code(bundle, sources, &code)?;
        for i in 0..n {
            blit(&mut grid, &to_rgb_image(&out.index_first(i)), i + 1, j + 1, size);
        }
    }
    Ok(grid)
}

/// Provenance of one grid cell, for the side-car JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub row: usize,
    pub col: usize,
    pub source: String,
    /// Reference path, or `seed:<s>/index:<i>` for latent columns.
    pub style: String,
    pub target_domain: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub mode: String,
    pub image: String,
    pub cells: Vec<CellRecord>,
}

pub fn write_manifest(manifest: &GridManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// A small progress grid: one training image per domain, one latent column per domain.
pub fn training_preview(bundle: &ModelBundle, dataset: &DomainDataset, path: &Path) -> Result<()> {
    let size = bundle.cfg.image_size;
    let k = bundle.cfg.num_domains;
    let sources = (0..dataset.num_domains())
        .map(|d| dataset.load(&dataset.train_index(d)[0], size))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream(bundle.cfg.seed, StreamId::Evaluation);
    let z = crate::data::sample_latents(k, bundle.cfg.latent_dim, &mut rng);
    let targets: Vec<usize> = (0..k).collect();
    let codes = code_for_latent(bundle, &z, &targets)?;
    let columns: Vec<StyleColumn> = (0..k)
        .map(|j| StyleColumn {
            header: ColumnHeader::Latent,
            code: codes.index_first(j),
        })
        .collect();
    let grid = render_grid(bundle, &Tensor::stack(&sources), &columns)?;
    save_png(&grid, path)
}
