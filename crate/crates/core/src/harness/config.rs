//! Experiment configuration: the training config plus where the data comes
//! from, how many seeds and how much parallelism.
//!
//! Files are line-oriented `key = value` with `#` comments. Unknown keys are
//! errors, and every problem is reported at once.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{
    blobs_with, build_fashion_pair, cifar_bias_pair, BlobParams, CheatScenario, DatasetKind, DomainPair,
};
use crate::error::{Error, Result};
use crate::losses::LearningRates;
use crate::trainers::{Ablation, Algorithm, TrainConfig};

pub const DEFAULT_SEEDS: usize = 5;
pub const DATA_DIR_ENV: &str = "DIREP_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub scenario: CheatScenario,
    /// Colour-plane bias for CIFAR.
    pub bias: Option<f64>,
    pub data_dir: Option<PathBuf>,
    pub blob_n: usize,
    pub blob_classes: usize,
    pub blob_width: usize,
    pub blob_noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Blobs,
            scenario: CheatScenario::None,
            bias: None,
            data_dir: None,
            blob_n: 500,
            blob_classes: 4,
            blob_width: 32,
            blob_noise: 0.3,
        }
    }
}

impl DatasetSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.kind {
            DatasetKind::Cifar => {
                match self.bias {
                    None => out.push("the cifar dataset needs a bias".into()),
                    Some(p) if !(0.0..=1.0).contains(&p) => out.push(format!("bias must lie in [0, 1], got {p}")),
                    _ => {}
                }
                if self.scenario != CheatScenario::None {
                    out.push("cheating scenarios apply to fm and blobs, not cifar".into());
                }
            }
            _ if self.bias.is_some() => out.push("a bias only applies to the cifar dataset".into()),
            _ => {}
        }
        if self.kind != DatasetKind::Blobs && self.data_dir.is_none() {
            out.push(format!("{} needs a data directory (set {DATA_DIR_ENV})", self.kind.name()));
        }
        if self.kind == DatasetKind::Blobs {
            if self.blob_n == 0 {
                out.push("blob_n must be positive".into());
            }
            if self.blob_classes < 2 {
                out.push("blob_classes must be at least 2".into());
            }
            if self.blob_width % 2 != 0 {
                out.push("blob_width must be even".into());
            }
            if !(self.blob_noise.is_finite() && self.blob_noise >= 0.0) {
                out.push("blob_noise must be finite and non-negative".into());
            }
        }
        out
    }

    /// Builds the domain pair for one run seed.
    pub fn load(&self, seed: u64) -> Result<DomainPair> {
        let dir = || {
            self.data_dir
                .as_deref()
                .ok_or_else(|| Error::Config(vec![format!("no data directory; set {DATA_DIR_ENV}")]))
        };
        match self.kind {
            DatasetKind::Fm => build_fashion_pair(dir()?, self.scenario, seed),
            DatasetKind::Cifar => cifar_bias_pair(dir()?, self.bias.unwrap_or(0.5), seed),
            DatasetKind::Blobs => blobs_with(&BlobParams {
                width: self.blob_width,
                noise: self.blob_noise,
                ..BlobParams::new(self.blob_n, self.blob_classes, self.scenario, seed)
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub seeds: usize,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            seeds: DEFAULT_SEEDS,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    /// Every problem with the configuration; runs never start unless empty.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.train.problems();
        if self.train.iterations == 0 {
            out.push("iterations must be positive".into());
        }
        if self.seeds == 0 {
            out.push("at least one seed is required".into());
        }
        if self.jobs == 0 {
            out.push("jobs must be positive".into());
        }
        out.extend(self.dataset.problems());
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems() {
            p if p.is_empty() => Ok(()),
            p => Err(Error::Config(p)),
        }
    }

    /// Condition label used in metrics files, e.g. `dsn+dsn_star` or `vaegan+semi5`.
    pub fn label(&self) -> String {
        let mut s = self.train.algorithm.name().to_string();
        if self.train.ablation != Ablation::None {
            s.push('+');
            s.push_str(self.train.ablation.name());
        }
        if self.train.semi_labels > 0 {
            s.push_str(&format!("+semi{}", self.train.semi_labels));
        }
        s
    }

    /// Run config for seed index `i`.
    pub fn for_seed(&self, i: usize) -> TrainConfig {
        TrainConfig {
            seed: self.train.seed + i as u64,
            ..self.train.clone()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut errors = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", no + 1));
                continue;
            };
            if let Err(e) = cfg.set(key.trim(), value.trim()) {
                errors.push(format!("line {}: {e}", no + 1));
            }
        }
        if errors.is_empty() {
            errors = cfg.problems();
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key. Values are parsed but not cross-checked.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<V: FromStr>(key: &str, v: &str) -> std::result::Result<V, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
        }
        fn named<V: FromStr<Err = Error>>(v: &str) -> std::result::Result<V, String> {
            v.parse().map_err(|e: Error| e.to_string())
        }
        let t = &mut self.train;
        let w = &mut t.weights;
        let d = &mut self.dataset;
        match key {
            "algo" => t.algorithm = named::<Algorithm>(value)?,
            "ablation" => t.ablation = named::<Ablation>(value)?,
            "cheating" => d.scenario = named::<CheatScenario>(value)?,
            "dataset" => d.kind = named::<DatasetKind>(value)?,
            "bias" => d.bias = Some(num(key, value)?),
            "data_dir" => d.data_dir = Some(PathBuf::from(value)),
            "blob_n" => d.blob_n = num(key, value)?,
            "blob_classes" => d.blob_classes = num(key, value)?,
            "blob_width" => d.blob_width = num(key, value)?,
            "blob_noise" => d.blob_noise = num(key, value)?,
            "semi" => t.semi_labels = num(key, value)?,
            "iters" | "iterations" => t.iterations = num(key, value)?,
            "batch" => t.batch_size = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "eval_every" => t.eval_every = num(key, value)?,
            "eval_samples" => t.eval_samples = Some(num(key, value)?),
            "explicit_encoder" => t.explicit_encoder = num(key, value)?,
            "lr" => w.lr = LearningRates::uniform(num(key, value)?),
            "beta" => w.beta = num(key, value)?,
            "gamma" => w.gamma = num(key, value)?,
            "mu" => w.mu = num(key, value)?,
            "tau" => w.lambda.tau = num(key, value)?,
            "lambda" => w.lambda.fixed = Some(num(key, value)?),
            "dsn_recon" => w.dsn_recon = num(key, value)?,
            "dsn_difference" => w.dsn_difference = num(key, value)?,
            "reverse_kl" => w.reverse_kl = num(key, value)?,
            "reverse_difference" => w.reverse_difference = num(key, value)?,
            "seeds" => self.seeds = num(key, value)?,
            "jobs" => self.jobs = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}
