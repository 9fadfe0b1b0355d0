use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Real, Tensor};
use crate::datasets::{Batcher, DomainPair, LabeledSample};
use crate::error::{Error, Result};
use crate::networks::{DecoderInput, ModelSet, Network};

use super::step::{step, Batch, Optimizers, StepSpec};
use super::{Ablation, Algorithm, StepReport, TrainConfig};

const EVAL_CHUNK: usize = 1024;

// Independent random streams derived from the run seed. Model weights use the
// seed directly (one stream per network role).
const SOURCE_STREAM: u64 = 101;
const TARGET_STREAM: u64 = 102;
const REVEAL_STREAM: u64 = 103;
const REVEALED_BATCH_STREAM: u64 = 104;
const NOISE_STREAM: u64 = 105;

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    derived_rng(seed, stream).next_u64()
}

fn to_tensor<T: Real>(samples: &[&LabeledSample], width: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(samples.len() * width);
    for s in samples {
        if s.x.len() != width {
            return Err(Error::Invalid(format!("sample width {} != {width}", s.x.len())));
        }
        data.extend(s.x.iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Ok(Tensor::matrix(samples.len(), width, data)?)
}

fn labels_of(samples: &[&LabeledSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Invalid("labelled split contains an unlabelled sample".into())))
        .collect()
}

/// Indices of `per_class` target samples per class, drawn once from `seed`.
pub fn reveal_labels(samples: &[LabeledSample], per_class: usize, classes: usize, seed: u64) -> Vec<usize> {
    if per_class == 0 {
        return Vec::new();
    }
    let mut rng = derived_rng(seed, REVEAL_STREAM);
    let mut out = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == Some(c)).collect();
        idx.shuffle(&mut rng);
        out.extend(idx.into_iter().take(per_class));
    }
    out.sort_unstable();
    out
}

/// A run in progress: models, optimizer state and the batch streams.
pub struct Trainer<'a, T> {
    config: TrainConfig,
    pair: &'a DomainPair,
    pub models: ModelSet<T>,
    pub optimizers: Optimizers<T>,
    source: Batcher,
    target: Batcher,
    revealed: Vec<usize>,
    revealed_batcher: Option<Batcher>,
    noise_rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(config: &TrainConfig, pair: &'a DomainPair) -> Result<Self> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let arch = config.arch_for(&pair.descriptor);
        if arch.input_width != pair.descriptor.input_width() || arch.classes != pair.descriptor.classes {
            return Err(Error::Config(vec![format!(
                "architecture expects {} inputs and {} classes, dataset has {} and {}",
                arch.input_width,
                arch.classes,
                pair.descriptor.input_width(),
                pair.descriptor.classes
            )]));
        }
        let models = ModelSet::build(&arch, config.layout(), config.seed)?;
        let optimizers = Optimizers::new(&models);
        let labelled = Self::labelled_split(config.algorithm, pair);
        let source = Batcher::new(labelled.len(), config.batch_size, derived_seed(config.seed, SOURCE_STREAM))?;
        let target = Batcher::new(
            pair.target_train.len(),
            config.batch_size,
            derived_seed(config.seed, TARGET_STREAM),
        )?;
        let revealed = reveal_labels(&pair.target_train, config.semi_labels, arch.classes, config.seed);
        let revealed_batcher = if revealed.is_empty() {
            None
        } else {
            Some(Batcher::new(
                revealed.len(),
                config.batch_size.min(revealed.len()),
                derived_seed(config.seed, REVEALED_BATCH_STREAM),
            )?)
        };
        Ok(Trainer {
            config: config.clone(),
            pair,
            models,
            optimizers,
            source,
            target,
            revealed,
            revealed_batcher,
            noise_rng: derived_rng(config.seed, NOISE_STREAM),
            iteration: 0,
        })
    }

    fn labelled_split(algorithm: Algorithm, pair: &DomainPair) -> &[LabeledSample] {
        if algorithm == Algorithm::TargetOnly {
            &pair.target_train
        } else {
            &pair.source_train
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn revealed(&self) -> &[usize] {
        &self.revealed
    }

    pub(super) fn draw_batch(&mut self) -> Result<Batch<T>> {
        let width = self.pair.descriptor.input_width();
        let labelled = Self::labelled_split(self.config.algorithm, self.pair);
        let src = self.source.next_batch(labelled);
        let tgt = self.target.next_batch(&self.pair.target_train);
        let mut batch = Batch::new(to_tensor(&src, width)?, labels_of(&src)?, to_tensor(&tgt, width)?);
        if let Some(b) = self.revealed_batcher.as_mut() {
            let rev: Vec<&LabeledSample> = b
                .next_indices()
                .into_iter()
                .map(|i| &self.pair.target_train[self.revealed[i]])
                .collect();
            batch.revealed = to_tensor(&rev, width)?;
            batch.revealed_labels = labels_of(&rev)?;
        }
        if self.models.encoder.is_some() {
            let k = self.models.arch.ddrep_width;
            let n = src.len() + tgt.len();
            let data = (0..n * k)
                .map(|_| T::from_f64_lossy(StandardNormal.sample(&mut self.noise_rng)))
                .collect();
            batch.noise = Some(Tensor::matrix(n, k, data)?);
        }
        Ok(batch)
    }

    pub fn spec(&self, iteration: usize) -> StepSpec {
        let mut spec = StepSpec::new(self.config.algorithm, self.config.weights, iteration);
        spec.reverse_kl = match self.config.ablation {
            Ablation::DsnReverseKl => true,
            Ablation::DsnStar => iteration < self.config.iterations,
            _ => false,
        };
        spec.reverse_difference = self.config.ablation == Ablation::VaeganReverseDifference;
        spec
    }

    /// One update; the iteration counter advances only on success.
    pub fn step(&mut self) -> Result<StepReport> {
        let batch = self.draw_batch()?;
        let spec = self.spec(self.iteration);
        let report = step(&mut self.models, &mut self.optimizers, &batch, &spec, self.iteration)?;
        self.iteration += 1;
        Ok(report)
    }

    fn accuracies(&self, limit: usize) -> Result<(f64, f64)> {
        let cut = |s: &'a [LabeledSample]| &s[..s.len().min(limit)];
        Ok((
            evaluate(&self.models.generator, &self.models.classifier, cut(&self.pair.source_test))?,
            evaluate(&self.models.generator, &self.models.classifier, cut(&self.pair.target_test))?,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub models: ModelSet<T>,
    pub history: Vec<StepReport>,
    /// Full source and target test-set accuracies of the final models.
    pub source_acc: f64,
    pub target_acc: f64,
    pub revealed: Vec<usize>,
}

pub fn train(config: &TrainConfig, pair: &DomainPair) -> Result<TrainOutcome<f32>> {
    train_with(config, pair, |_| {})
}

/// [`train`], calling `on_report` for every recorded report as it happens.
pub fn train_with<T: Real>(
    config: &TrainConfig,
    pair: &DomainPair,
    mut on_report: impl FnMut(&StepReport),
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::<T>::new(config, pair)?;
    let total = config.total_iterations();
    let mut history = Vec::new();
    while trainer.iteration() < total {
        let mut report = trainer.step()?;
        let done = trainer.iteration();
        if done % config.eval_every == 0 || done == total {
            if let Some(limit) = config.eval_samples {
                let (s, t) = trainer.accuracies(limit)?;
                report.source_acc = Some(s);
                report.target_acc = Some(t);
            }
            on_report(&report);
            history.push(report);
        }
    }
    let (source_acc, target_acc) = trainer.accuracies(usize::MAX)?;
    Ok(TrainOutcome {
        revealed: trainer.revealed,
        models: trainer.models,
        history,
        source_acc,
        target_acc,
    })
}

fn chunks<'s>(samples: &'s [LabeledSample]) -> impl Iterator<Item = Vec<&'s LabeledSample>> {
    samples.chunks(EVAL_CHUNK).map(|c| c.iter().collect())
}

/// Fraction of samples with `argmax C(G(x)) == label`; ties go to the lowest class.
pub fn evaluate<T: Real>(g: &Network<T>, c: &Network<T>, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for chunk in chunks(samples) {
        let labels = labels_of(&chunk)?;
        let x = to_tensor::<T>(&chunk, g.input_width())?;
        let probs = c.infer(&g.infer(&x)?)?;
        correct += probs.argmax_rows().iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// `F(G(x) ⊕ DDRep)` with the DDRep set deterministically: the encoder mean
/// where there is an encoder, followed by `bits` where the decoder takes the
/// domain bit.
pub fn reconstruct<T: Real>(models: &ModelSet<T>, x: &Tensor<T>, bits: &[f64]) -> Result<Tensor<T>> {
    let decoder = models
        .decoder
        .as_ref()
        .ok_or_else(|| Error::Invalid("model has no decoder".into()))?;
    let input = models.layout.decoder.expect("decoder present");
    let rows = x.shape().first().copied().unwrap_or(0);
    let mut parts = vec![models.generator.infer(x)?];
    match input {
        DecoderInput::Encoder | DecoderInput::EncoderAndBit => {
            let e = models.encoder.as_ref().expect("layout checked at build");
            let out = e.infer(x)?;
            let k = out.cols() / 2;
            let mean: Vec<T> = (0..rows).flat_map(|i| out.row(i)[..k].to_vec()).collect();
            parts.push(Tensor::matrix(rows, k, mean)?);
        }
        DecoderInput::DomainBit => {}
        DecoderInput::Private => return Err(Error::Invalid("a DSN decoder has no domain bit or DDRep".into())),
    }
    if matches!(input, DecoderInput::DomainBit | DecoderInput::EncoderAndBit) {
        if bits.len() != rows {
            return Err(Error::Invalid(format!("{} domain bits for {rows} rows", bits.len())));
        }
        parts.push(Tensor::from_f64(vec![rows, 1], bits)?);
    }
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for i in 0..rows {
        parts.iter().for_each(|p| data.extend_from_slice(p.row(i)));
    }
    decoder.infer(&Tensor::matrix(rows, width, data)?)
}

/// Reconstruction with every domain bit flipped: `F(G(x), 1 - d)`.
pub fn flip_bit_reconstruct<T: Real>(models: &ModelSet<T>, x: &Tensor<T>, bits: &[f64]) -> Result<Tensor<T>> {
    if !matches!(
        models.layout.decoder,
        Some(DecoderInput::DomainBit | DecoderInput::EncoderAndBit)
    ) {
        return Err(Error::Invalid("bit flipping needs an explicit-DDRep model".into()));
    }
    let flipped: Vec<f64> = bits.iter().map(|d| 1.0 - d).collect();
    reconstruct(models, x, &flipped)
}

/// Batch-mean KL of the encoder's Gaussian from `N(0, 1)`, in bits.
pub fn ddrep_information_bits<T: Real>(encoder: &Network<T>, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let k = encoder.output_width() / 2;
    let mut total = 0.0;
    for chunk in chunks(samples) {
        let out = encoder.infer(&to_tensor::<T>(&chunk, encoder.input_width())?)?;
        for i in 0..chunk.len() {
            let row = out.row(i);
            for j in 0..k {
                let m = row[j].to_f64().unwrap_or(f64::NAN);
                let s = row[k + j].to_f64().unwrap_or(f64::NAN);
                total += -0.5 * (1.0 + s - s.exp() - m * m);
            }
        }
    }
    Ok(total / samples.len() as f64 / std::f64::consts::LN_2)
}
