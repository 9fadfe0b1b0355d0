//! Domain pairs: Fashion-MNIST with cheating bits, colour-biased CIFAR-10 and
//! a synthetic blob fixture, plus the shuffling batcher.
//!
//! Pixels come first in every input vector; a 10-wide cheating one-hot, when
//! present, is appended after them.

mod blobs;
mod cifar;
mod container;
mod idx;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blobs::{blob_means, blobs_with, synthetic_blobs, BlobParams};
pub use cifar::{biased_channel, keep_only, read_cifar_batch, Channel, PLANE as CIFAR_PLANE};
pub use container::{read_pair, write_pair, CONTAINER_MAGIC};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx, IMAGES_MAGIC, LABELS_MAGIC};

use crate::error::{Error, Result};

pub const CLASSES: usize = 10;
pub const FM_SIDE: usize = 28;
pub const FM_PIXELS: usize = FM_SIDE * FM_SIDE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f32>,
    pub label: Option<usize>,
    /// 0 for source, 1 for target.
    pub domain: u8,
}

impl LabeledSample {
    pub fn new(x: Vec<f32>, label: Option<usize>, domain: u8) -> Self {
        Self { x, label, domain }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheatMode {
    Correct,
    Shift,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheatScenario {
    None,
    Shift,
    Random,
}

impl CheatScenario {
    pub const ALL: [CheatScenario; 3] = [CheatScenario::None, CheatScenario::Shift, CheatScenario::Random];

    pub fn name(self) -> &'static str {
        match self {
            CheatScenario::None => "none",
            CheatScenario::Shift => "shift",
            CheatScenario::Random => "random",
        }
    }

    fn target_mode(self) -> Option<CheatMode> {
        match self {
            CheatScenario::None => None,
            CheatScenario::Shift => Some(CheatMode::Shift),
            CheatScenario::Random => Some(CheatMode::Random),
        }
    }
}

impl std::str::FromStr for CheatScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CheatScenario::None),
            "shift" => Ok(CheatScenario::Shift),
            "random" => Ok(CheatScenario::Random),
            other => Err(Error::Invalid(format!("unknown cheating scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Fm,
    Cifar,
    Blobs,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Fm => "fm",
            DatasetKind::Cifar => "cifar",
            DatasetKind::Blobs => "blobs",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fm" => Ok(DatasetKind::Fm),
            "cifar" => Ok(DatasetKind::Cifar),
            "blobs" => Ok(DatasetKind::Blobs),
            other => Err(Error::Invalid(format!("unknown dataset `{other}`"))),
        }
    }
}

/// How a pair was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDescriptor {
    pub dataset: DatasetKind,
    pub scenario: CheatScenario,
    pub bias: Option<f64>,
    pub seed: u64,
    /// Width of the pixel/feature segment; cheating bits follow it.
    pub pixel_width: usize,
    pub cheat_width: usize,
    pub classes: usize,
}

impl PairDescriptor {
    pub fn input_width(&self) -> usize {
        self.pixel_width + self.cheat_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source_train: Vec<LabeledSample>,
    pub source_test: Vec<LabeledSample>,
    pub target_train: Vec<LabeledSample>,
    pub target_test: Vec<LabeledSample>,
    pub descriptor: PairDescriptor,
}

impl DomainPair {
    pub fn splits(&self) -> [(&'static str, &[LabeledSample]); 4] {
        [
            ("source_train", &self.source_train),
            ("source_test", &self.source_test),
            ("target_train", &self.target_train),
            ("target_test", &self.target_test),
        ]
    }

    /// Full scan of the per-sample invariants: widths, domain bits, label
    /// range, one-hot cheating segment, identical class sets across domains.
    pub fn validate(&self) -> Result<()> {
        let desc = &self.descriptor;
        let width = desc.input_width();
        let mut classes = [Vec::new(), Vec::new()];
        for (name, split) in self.splits() {
            let domain = u8::from(name.starts_with("target"));
            for (i, s) in split.iter().enumerate() {
                let bad = |what: String| Error::Invalid(format!("{name}[{i}]: {what}"));
                if s.x.len() != width {
                    return Err(bad(format!("width {} != {width}", s.x.len())));
                }
                if s.domain != domain {
                    return Err(bad(format!("domain bit {}", s.domain)));
                }
                if let Some(l) = s.label {
                    if l >= desc.classes {
                        return Err(bad(format!("label {l} out of range")));
                    }
                    classes[domain as usize].push(l);
                }
                if desc.cheat_width > 0 {
                    cheat_index(&s.x[desc.pixel_width..]).map_err(|e| bad(e.to_string()))?;
                }
            }
        }
        for c in &mut classes {
            c.sort_unstable();
            c.dedup();
        }
        if classes[0] != classes[1] {
            return Err(Error::Invalid(format!(
                "class sets differ: source {:?} target {:?}",
                classes[0], classes[1]
            )));
        }
        Ok(())
    }
}

/// Index of the hot entry of a one-hot segment.
pub fn cheat_index(bits: &[f32]) -> Result<usize> {
    let hot: Vec<usize> = bits.iter().enumerate().filter(|(_, &b)| b == 1.0).map(|(i, _)| i).collect();
    let zeros = bits.iter().filter(|&&b| b == 0.0).count();
    match hot.as_slice() {
        [i] if zeros + 1 == bits.len() => Ok(*i),
        _ => Err(Error::Invalid(format!("cheating segment is not one-hot: {bits:?}"))),
    }
}

/// Rotate a 28x28 image by 180 degrees: `(r, c) -> (27 - r, 27 - c)`.
pub fn flip180(image: &[f32]) -> Result<Vec<f32>> {
    if image.len() != FM_PIXELS {
        return Err(Error::Invalid(format!(
            "flip180 expects {FM_PIXELS} pixels, got {}",
            image.len()
        )));
    }
    // row-major, so the full rotation is a plain reversal
    Ok(image.iter().rev().copied().collect())
}

/// Append a 10-wide one-hot to a sample with no cheating segment yet.
pub fn attach_cheating<R: Rng>(sample: &LabeledSample, mode: CheatMode, rng: &mut R) -> Result<LabeledSample> {
    attach_cheating_k(sample, mode, CLASSES, rng)
}

/// [`attach_cheating`] with a `classes`-wide one-hot.
pub fn attach_cheating_k<R: Rng>(
    sample: &LabeledSample,
    mode: CheatMode,
    classes: usize,
    rng: &mut R,
) -> Result<LabeledSample> {
    let index = match (mode, sample.label) {
        (CheatMode::Random, _) => rng.random_range(0..classes),
        (CheatMode::Correct, Some(l)) => l,
        (CheatMode::Shift, Some(l)) => (l + 1) % classes,
        (_, None) => return Err(Error::Invalid(format!("{mode:?} cheating needs a labelled sample"))),
    };
    if index >= classes {
        return Err(Error::Invalid(format!("label {index} does not fit {classes} cheating bits")));
    }
    let mut x = Vec::with_capacity(sample.x.len() + classes);
    x.extend_from_slice(&sample.x);
    x.extend((0..classes).map(|i| if i == index { 1.0 } else { 0.0 }));
    Ok(LabeledSample { x, ..sample.clone() })
}

/// Apply a scenario: source gets correct bits, target gets the scenario's bits
/// (nothing at all for `None`). `rng` drives random bits only.
pub(crate) fn apply_scenario<R: Rng>(
    source: &[LabeledSample],
    target: &[LabeledSample],
    scenario: CheatScenario,
    classes: usize,
    rng: &mut R,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let Some(target_mode) = scenario.target_mode() else {
        return Ok((source.to_vec(), target.to_vec()));
    };
    let src = source
        .iter()
        .map(|s| attach_cheating_k(s, CheatMode::Correct, classes, rng))
        .collect::<Result<_>>()?;
    let tgt = target
        .iter()
        .map(|s| attach_cheating_k(s, target_mode, classes, rng))
        .collect::<Result<_>>()?;
    Ok((src, tgt))
}

fn to_target(samples: &[LabeledSample], f: impl Fn(&[f32]) -> Result<Vec<f32>>) -> Result<Vec<LabeledSample>> {
    samples
        .iter()
        .map(|s| Ok(LabeledSample::new(f(&s.x)?, s.label, 1)))
        .collect()
}

/// Fashion-MNIST pair from already-loaded train/test samples: the target is
/// the same images rotated by 180 degrees.
pub fn fashion_pair_from(
    train: &[LabeledSample],
    test: &[LabeledSample],
    scenario: CheatScenario,
    seed: u64,
) -> Result<DomainPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (source_train, target_train) = apply_scenario(train, &to_target(train, flip180)?, scenario, CLASSES, &mut rng)?;
    let (source_test, target_test) = apply_scenario(test, &to_target(test, flip180)?, scenario, CLASSES, &mut rng)?;
    Ok(DomainPair {
        source_train,
        source_test,
        target_train,
        target_test,
        descriptor: PairDescriptor {
            dataset: DatasetKind::Fm,
            scenario,
            bias: None,
            seed,
            pixel_width: FM_PIXELS,
            cheat_width: if scenario == CheatScenario::None { 0 } else { CLASSES },
            classes: CLASSES,
        },
    })
}

fn first_existing(dir: &Path, stem: &str) -> Result<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| {
            Error::io(
                dir.join(stem),
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found (plain or .gz)"),
            )
        })
}

/// Load the four Fashion-MNIST IDX files from `dir` (plain or gzip) and build
/// the pair for `scenario`.
pub fn build_fashion_pair(dir: &Path, scenario: CheatScenario, seed: u64) -> Result<DomainPair> {
    let load = |images: &str, labels: &str| load_idx(&first_existing(dir, images)?, &first_existing(dir, labels)?);
    let train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    fashion_pair_from(&train, &test, scenario, seed)
}

/// Colour-biased source and green-only target from loaded CIFAR samples.
pub fn cifar_pair_from(train: &[LabeledSample], test: &[LabeledSample], p: f64, seed: u64) -> Result<DomainPair> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("bias must lie in [0, 1], got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bias = |samples: &[LabeledSample]| -> Result<Vec<LabeledSample>> {
        samples
            .iter()
            .map(|s| {
                let l = s.label.ok_or_else(|| Error::Invalid("unlabelled CIFAR sample".into()))?;
                let ch = biased_channel(l, p, &mut rng);
                Ok(LabeledSample::new(keep_only(&s.x, ch)?, s.label, 0))
            })
            .collect()
    };
    let source_train = bias(train)?;
    let source_test = bias(test)?;
    let green = |x: &[f32]| keep_only(x, Channel::Green);
    Ok(DomainPair {
        source_train,
        source_test,
        target_train: to_target(train, green)?,
        target_test: to_target(test, green)?,
        descriptor: PairDescriptor {
            dataset: DatasetKind::Cifar,
            scenario: CheatScenario::None,
            bias: Some(p),
            seed,
            pixel_width: 3 * CIFAR_PLANE,
            cheat_width: 0,
            classes: CLASSES,
        },
    })
}

/// Read `data_batch_1..5.bin` and `test_batch.bin` from `dir` and build the
/// biased pair.
pub fn cifar_bias_pair(dir: &Path, p: f64, seed: u64) -> Result<DomainPair> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("bias must lie in [0, 1], got {p}")));
    }
    let mut train = Vec::new();
    for i in 1..=5 {
        train.extend(read_cifar_batch(&dir.join(format!("data_batch_{i}.bin")))?);
    }
    let test = read_cifar_batch(&dir.join("test_batch.bin"))?;
    cifar_pair_from(&train, &test, p, seed)
}

/// Endless stream of shuffled index batches; reshuffles at every epoch
/// boundary and is fully determined by its seed.
#[derive(Debug, Clone)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Invalid("cannot batch an empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self { order, pos: 0, batch_size, rng })
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (self.batch_size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }

    pub fn next_batch<'a>(&mut self, data: &'a [LabeledSample]) -> Vec<&'a LabeledSample> {
        self.next_indices().into_iter().map(|i| &data[i]).collect()
    }
}

impl Iterator for Batcher {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_indices())
    }
}
