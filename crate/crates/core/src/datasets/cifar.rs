//! CIFAR-10 binary batches and the colour-plane bias.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::LabeledSample;
use crate::error::{Error, Result};

pub const PLANE: usize = 32 * 32;
pub const RECORD: usize = 1 + 3 * PLANE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    fn plane(self) -> usize {
        match self {
            Channel::Red => 0,
            Channel::Green => 1,
            Channel::Blue => 2,
        }
    }
}

/// Records of one batch file: label byte then R, G, B planes of 32x32 bytes.
/// Pixels keep the planar layout and are scaled to `[0, 1]`.
pub fn read_cifar_batch(path: &Path) -> Result<Vec<LabeledSample>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % RECORD != 0 {
        return Err(Error::format(
            path,
            format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(RECORD)
        .map(|rec| {
            let label = rec[0] as usize;
            if label > 9 {
                return Err(Error::format(path, format!("label byte {label} out of range")));
            }
            let x = rec[1..].iter().map(|&p| p as f32 / 255.0).collect();
            Ok(LabeledSample::new(x, Some(label), 0))
        })
        .collect()
}

/// Zero every plane except `keep`.
pub fn keep_only(image: &[f32], keep: Channel) -> Result<Vec<f32>> {
    if image.len() != 3 * PLANE {
        return Err(Error::Invalid(format!(
            "colour image must have {} values, got {}",
            3 * PLANE,
            image.len()
        )));
    }
    let mut out = vec![0.0; image.len()];
    let span = keep.plane() * PLANE..(keep.plane() + 1) * PLANE;
    out[span.clone()].copy_from_slice(&image[span]);
    Ok(out)
}

/// Plane kept for a source image: the label-parity channel (blue for odd, red
/// for even) with probability `p`, otherwise red or blue uniformly.
pub fn biased_channel<R: Rng>(label: usize, p: f64, rng: &mut R) -> Channel {
    if rng.random::<f64>() < p {
        if label % 2 == 1 {
            Channel::Blue
        } else {
            Channel::Red
        }
    } else if rng.random::<bool>() {
        Channel::Red
    } else {
        Channel::Blue
    }
}
