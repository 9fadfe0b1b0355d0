//! Per-batch update steps for every algorithm, the training loop and the
//! post-training probes (accuracy, bit-flip reconstruction, DDRep size).
//!
//! A step runs one forward pass over both domains, then asks the tape for
//! each network's gradient of its own objective. Updates are applied only
//! after every gradient has been taken, so no network sees another's new
//! weights within a step.

mod step;
mod train;

use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetKind, PairDescriptor};
use crate::losses::LossWeights;
use crate::networks::{ArchConfig, DecoderInput, ModelLayout};

pub use step::{
    apply_gradients, compute_gradients, dann_step, dsn_step, explicit_ddrep_step, gan_based_step, step,
    vaegan_step, Batch, Optimizers, StepGradients, StepSpec,
};
pub use train::{
    ddrep_information_bits, evaluate, flip_bit_reconstruct, reconstruct, reveal_labels, train, train_with,
    TrainOutcome, Trainer,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Vaegan,
    ExplicitDdrep,
    GanBased,
    Dann,
    Dsn,
    /// `G` and `C` trained on source labels only.
    SourceOnly,
    /// `G` and `C` trained on target labels: the supervised ceiling.
    TargetOnly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Vaegan,
        Algorithm::ExplicitDdrep,
        Algorithm::GanBased,
        Algorithm::Dann,
        Algorithm::Dsn,
        Algorithm::SourceOnly,
        Algorithm::TargetOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vaegan => "vaegan",
            Algorithm::ExplicitDdrep => "explicit",
            Algorithm::GanBased => "gan",
            Algorithm::Dann => "dann",
            Algorithm::Dsn => "dsn",
            Algorithm::SourceOnly => "source_only",
            Algorithm::TargetOnly => "target_only",
        }
    }

    pub fn adversarial(self) -> bool {
        !matches!(self, Algorithm::SourceOnly | Algorithm::TargetOnly)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .or(match s {
                "explicit_ddrep" => Some(Algorithm::ExplicitDdrep),
                "gan_based" => Some(Algorithm::GanBased),
                _ => None,
            })
            .ok_or_else(|| crate::Error::Invalid(format!("unknown algorithm `{s}`")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// DSN plus a penalty on the information in the shared representation.
    DsnReverseKl,
    /// `DsnReverseKl` for the configured iterations, then as many plain DSN steps.
    DsnStar,
    /// VAEGAN plus the negated difference loss between DIRep and DDRep.
    VaeganReverseDifference,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::None,
        Ablation::DsnReverseKl,
        Ablation::DsnStar,
        Ablation::VaeganReverseDifference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::DsnReverseKl => "dsn_reverse_kl",
            Ablation::DsnStar => "dsn_star",
            Ablation::VaeganReverseDifference => "vaegan_reverse_difference",
        }
    }

    pub fn compatible_with(self, algorithm: Algorithm) -> bool {
        match self {
            Ablation::None => true,
            Ablation::DsnReverseKl | Ablation::DsnStar => algorithm == Algorithm::Dsn,
            Ablation::VaeganReverseDifference => algorithm == Algorithm::Vaegan,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| crate::Error::Invalid(format!("unknown ablation `{s}`")))
    }
}

pub const SEMI_LEVELS: [usize; 7] = [0, 1, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub ablation: Ablation,
    pub weights: LossWeights,
    pub iterations: usize,
    /// Samples per domain per step.
    pub batch_size: usize,
    pub seed: u64,
    /// Target labels revealed per class.
    pub semi_labels: usize,
    /// Record a report every this many iterations (and at the last one).
    pub eval_every: usize,
    /// Test-set accuracies are attached to recorded reports when set,
    /// measured on at most this many samples per domain.
    pub eval_samples: Option<usize>,
    /// Explicit DDRep only: feed the encoder's DDRep next to the domain bit.
    pub explicit_encoder: bool,
    /// Network widths; derived from the dataset when absent.
    pub arch: Option<ArchConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Vaegan,
            ablation: Ablation::None,
            weights: LossWeights::default(),
            iterations: 10_000,
            batch_size: 128,
            seed: 0,
            semi_labels: 0,
            eval_every: 100,
            eval_samples: None,
            explicit_encoder: false,
            arch: None,
        }
    }
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        TrainConfig {
            algorithm,
            ..Default::default()
        }
    }

    /// Zero iterations is accepted here (training then returns the initial
    /// networks); command-line runs reject it.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.weights.problems();
        if self.batch_size == 0 {
            out.push("batch size must be positive".into());
        }
        if self.eval_every == 0 {
            out.push("evaluation cadence must be positive".into());
        }
        if !self.ablation.compatible_with(self.algorithm) {
            out.push(format!(
                "ablation {} does not apply to {}",
                self.ablation.name(),
                self.algorithm.name()
            ));
        }
        if !SEMI_LEVELS.contains(&self.semi_labels) {
            out.push(format!(
                "revealed labels per class must be one of {SEMI_LEVELS:?}, got {}",
                self.semi_labels
            ));
        }
        if self.explicit_encoder && self.algorithm != Algorithm::ExplicitDdrep {
            out.push("the encoder-plus-bit decoder only applies to explicit DDRep".into());
        }
        out
    }

    /// Steps actually run: `dsn_star` appends a second, plain phase.
    pub fn total_iterations(&self) -> usize {
        match self.ablation {
            Ablation::DsnStar => 2 * self.iterations,
            _ => self.iterations,
        }
    }

    pub fn layout(&self) -> ModelLayout {
        match self.algorithm {
            Algorithm::Vaegan => ModelLayout::VAEGAN,
            Algorithm::ExplicitDdrep => ModelLayout {
                encoder: self.explicit_encoder,
                decoder: Some(if self.explicit_encoder {
                    DecoderInput::EncoderAndBit
                } else {
                    DecoderInput::DomainBit
                }),
                private_encoders: false,
            },
            Algorithm::Dsn => ModelLayout {
                encoder: false,
                decoder: Some(DecoderInput::Private),
                private_encoders: true,
            },
            Algorithm::GanBased | Algorithm::Dann | Algorithm::SourceOnly | Algorithm::TargetOnly => {
                ModelLayout::CLASSIFIER_ONLY
            }
        }
    }

    pub fn arch_for(&self, desc: &PairDescriptor) -> ArchConfig {
        self.arch.clone().unwrap_or_else(|| default_arch(desc))
    }
}

/// The paper's MLP for image data; the compact variant for blobs.
pub fn default_arch(desc: &PairDescriptor) -> ArchConfig {
    match desc.dataset {
        DatasetKind::Blobs => ArchConfig::compact(desc.input_width(), desc.classes),
        DatasetKind::Fm | DatasetKind::Cifar => {
            let mut arch = ArchConfig::fashion_mnist(desc.input_width());
            arch.classes = desc.classes;
            arch
        }
    }
}

/// Losses of one step. `loss_difference` is present only when a difference
/// term exists; `source_acc`/`target_acc` only on evaluated reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub loss_c: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_r: f64,
    pub loss_kl: f64,
    pub loss_difference: Option<f64>,
    pub lambda: f64,
    pub source_acc: Option<f64>,
    pub target_acc: Option<f64>,
}
