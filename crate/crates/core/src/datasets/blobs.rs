//! Two-dimensional Gaussian clusters; the target is the source rotated by 180
//! degrees about the origin. Trains in seconds.
//!
//! Each latent point `p` is rendered as `width` "pixels" `0.5 + a_j . p / SPAN`
//! with unit vectors `a_{w-1-j} = -a_j`, so rotating the latent point reverses
//! the pixel vector, the same way a 180 degree image rotation does. With
//! `width = 0` the raw coordinates, shifted into `[0, 1]`, are used instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{apply_scenario, CheatScenario, DatasetKind, DomainPair, LabeledSample, PairDescriptor};
use crate::error::{Error, Result};

/// Raw coordinates are divided by this before shifting into `[0, 1]`.
const SPAN: f64 = 8.0;
const INNER: f64 = 0.6;
const OUTER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobParams {
    pub n_per_class: usize,
    pub test_per_class: usize,
    pub classes: usize,
    /// Cluster standard deviation as a fraction of the spacing between radii.
    pub noise: f64,
    /// Rendered pixels per sample; 0 keeps the raw coordinates. Must be even.
    pub width: usize,
    pub scenario: CheatScenario,
    pub seed: u64,
}

impl BlobParams {
    pub fn new(n_per_class: usize, classes: usize, scenario: CheatScenario, seed: u64) -> Self {
        Self {
            n_per_class,
            test_per_class: (n_per_class / 4).max(1),
            classes,
            noise: 0.3,
            width: 32,
            scenario,
            seed,
        }
    }
}

/// Class means stacked near the positive vertical axis at evenly spaced
/// radii. The class is carried by the distance from the origin, which the
/// rotation preserves; the domain is carried by the half-plane.
pub fn blob_means(classes: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..classes)
        .map(|c| {
            let angle = std::f64::consts::FRAC_PI_2 + rng.random_range(-0.25..0.25);
            let radius = INNER + ring_gap(classes) * c as f64;
            [radius * angle.cos(), radius * angle.sin()]
        })
        .collect()
}

fn ring_gap(classes: usize) -> f64 {
    (OUTER - INNER) / (classes.max(2) - 1) as f64
}

struct Renderer {
    /// Directions of the first half of the pixels.
    half: Vec<[f64; 2]>,
}

impl Renderer {
    fn new(width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        Renderer {
            half: (0..width / 2)
                .map(|_| {
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    [phi.cos(), phi.sin()]
                })
                .collect(),
        }
    }

    fn render(&self, p: [f64; 2]) -> Vec<f32> {
        let unit = |v: f64| (0.5 + v / SPAN).clamp(0.0, 1.0) as f32;
        if self.half.is_empty() {
            return p.iter().map(|&v| unit(v)).collect();
        }
        let dot = |a: &[f64; 2]| a[0] * p[0] + a[1] * p[1];
        let front = self.half.iter().map(|a| unit(dot(a)));
        let back = self.half.iter().rev().map(|a| unit(-dot(a)));
        front.chain(back).collect()
    }
}

fn draw(
    means: &[[f64; 2]],
    per_class: usize,
    noise: &Normal<f64>,
    rotate: bool,
    renderer: &Renderer,
    rng: &mut ChaCha8Rng,
) -> Vec<LabeledSample> {
    let sign = if rotate { -1.0 } else { 1.0 };
    let mut out = Vec::with_capacity(means.len() * per_class);
    for _ in 0..per_class {
        for (c, m) in means.iter().enumerate() {
            let p = [sign * (m[0] + noise.sample(rng)), sign * (m[1] + noise.sample(rng))];
            out.push(LabeledSample::new(renderer.render(p), Some(c), u8::from(rotate)));
        }
    }
    out
}

pub fn blobs_with(params: &BlobParams) -> Result<DomainPair> {
    if params.classes < 2 {
        return Err(Error::Invalid("blobs need at least two classes".into()));
    }
    if params.width % 2 == 1 {
        return Err(Error::Invalid(format!("blob pixel width must be even, got {}", params.width)));
    }
    let noise = Normal::new(0.0, params.noise * ring_gap(params.classes))
        .map_err(|e| Error::Invalid(format!("blob noise {}: {e}", params.noise)))?;
    let means = blob_means(params.classes, params.seed);
    let renderer = Renderer::new(params.width, params.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(2);
    let mut split = |per_class, rotate| draw(&means, per_class, &noise, rotate, &renderer, &mut rng);
    let source_train = split(params.n_per_class, false);
    let source_test = split(params.test_per_class, false);
    let target_train = split(params.n_per_class, true);
    let target_test = split(params.test_per_class, true);
    let k = params.classes;
    let (source_train, target_train) = apply_scenario(&source_train, &target_train, params.scenario, k, &mut rng)?;
    let (source_test, target_test) = apply_scenario(&source_test, &target_test, params.scenario, k, &mut rng)?;
    Ok(DomainPair {
        source_train,
        source_test,
        target_train,
        target_test,
        descriptor: PairDescriptor {
            dataset: DatasetKind::Blobs,
            scenario: params.scenario,
            bias: None,
            seed: params.seed,
            pixel_width: if params.width == 0 { 2 } else { params.width },
            cheat_width: if params.scenario == CheatScenario::None { 0 } else { k },
            classes: k,
        },
    })
}

pub fn synthetic_blobs(n_per_class: usize, classes: usize, scenario: CheatScenario, seed: u64) -> Result<DomainPair> {
    blobs_with(&BlobParams::new(n_per_class, classes, scenario, seed))
}
