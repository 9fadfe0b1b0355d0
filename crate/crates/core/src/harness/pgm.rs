use std::fs;
use std::path::Path;

use crate::autodiff::{Real, Tensor};
use crate::datasets::LabeledSample;
use crate::error::{Error, Result};
use crate::networks::ModelSet;
use crate::trainers::{flip_bit_reconstruct, reconstruct};

/// Binary greyscale PGM bytes; values are clamped to [0, 1] and scaled to 255.
pub fn encode_pgm(width: usize, height: usize, pixels: &[f32]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Invalid(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5 {width} {height} 255\n").into_bytes();
    // NaN clamps to itself and casts to 0
    out.extend(pixels.iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f32]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, pixels)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpSummary {
    pub written: usize,
    /// Samples whose flipped-bit reconstruction differs from the plain one in
    /// at least one 8-bit pixel.
    pub flip_differs: usize,
}

/// Writes `NNNN_orig.pgm`, `NNNN_recon.pgm` and `NNNN_flip.pgm` per sample.
/// Only the leading `width * height` inputs are treated as the image; any
/// cheating bits after them are ignored.
pub fn dump_reconstructions<T: Real>(
    models: &ModelSet<T>,
    samples: &[LabeledSample],
    dir: &Path,
    (width, height): (usize, usize),
) -> Result<DumpSummary> {
    let pixels = width * height;
    let input = models.arch.input_width;
    if pixels == 0 || pixels > input {
        return Err(Error::Invalid(format!(
            "inputs of width {input} do not hold a {width}x{height} image"
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut summary = DumpSummary {
        written: 0,
        flip_differs: 0,
    };
    for (i, s) in samples.iter().enumerate() {
        if s.x.len() != input {
            return Err(Error::Invalid(format!("sample {i} has width {}, model wants {input}", s.x.len())));
        }
        let x = Tensor::<T>::from_f64(vec![1, input], &s.x.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())?;
        let bit = [f64::from(s.domain)];
        let plain = to_f32(&reconstruct(models, &x, &bit)?);
        let flip = to_f32(&flip_bit_reconstruct(models, &x, &bit)?);
        let orig = encode_pgm(width, height, &s.x[..pixels])?;
        let recon = encode_pgm(width, height, &plain[..pixels])?;
        let flipped = encode_pgm(width, height, &flip[..pixels])?;
        if recon != flipped {
            summary.flip_differs += 1;
        }
        for (tag, bytes) in [("orig", orig), ("recon", recon), ("flip", flipped)] {
            let path = dir.join(format!("{i:04}_{tag}.pgm"));
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        summary.written += 1;
    }
    Ok(summary)
}

fn to_f32<T: Real>(t: &Tensor<T>) -> Vec<f32> {
    t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN) as f32).collect()
}
