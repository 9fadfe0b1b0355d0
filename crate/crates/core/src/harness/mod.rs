//! Experiment orchestration: seeded multi-run execution with crash-safe
//! persistence, metrics files, z-score comparison and reconstruction dumps.

mod config;
mod metrics;
mod pgm;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::save_checkpoint;
use crate::trainers::{train_with, StepReport, TrainConfig};

pub use config::{DatasetSpec, ExperimentConfig, DATA_DIR_ENV, DEFAULT_SEEDS};
pub use metrics::{read_metrics_csv, rows_of, write_metrics_csv, MetricsRow, FINAL, HEADER};
pub use pgm::{dump_reconstructions, encode_pgm, write_pgm, DumpSummary};

pub const RUNS_FILE: &str = "runs.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// One-sided 99% point of the standard normal.
pub const Z_THRESHOLD: f64 = 2.33;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Hash of the run's configuration with the seed removed.
    pub fingerprint: String,
    pub label: String,
    pub cheating_mode: String,
    pub bias: Option<f64>,
    pub seed: u64,
    pub source_acc: f64,
    pub target_acc: f64,
    pub history: Vec<StepReport>,
    pub seconds: f64,
}

// FNV-1a: stable across toolchains, unlike `DefaultHasher`
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Identifies a condition: everything in the config except the seed and the
/// degree of parallelism.
pub fn fingerprint(config: &ExperimentConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        train: &'a TrainConfig,
        dataset: &'a DatasetSpec,
    }
    let train = TrainConfig {
        seed: 0,
        ..config.train.clone()
    };
    let json = serde_json::to_vec(&Key {
        train: &train,
        dataset: &config.dataset,
    })
    .expect("config serialises");
    format!("{:016x}", fnv1a(&json))
}

/// Previously completed runs in `path` that match `fp`, keyed by seed.
pub fn load_completed(path: &Path, fp: &str) -> Result<BTreeMap<u64, RunResult>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        // a torn final line from a crash is skipped, and that seed re-runs
        let Ok(r) = serde_json::from_str::<RunResult>(&line) else {
            continue;
        };
        if r.fingerprint == fp {
            out.insert(r.seed, r);
        }
    }
    Ok(out)
}

fn append_record(file: &Mutex<File>, path: &Path, r: &RunResult) -> Result<()> {
    let mut line = serde_json::to_vec(r).map_err(|e| Error::format(path, e.to_string()))?;
    line.push(b'\n');
    let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
    f.write_all(&line).and_then(|_| f.sync_data()).map_err(|e| Error::io(path, e))
}

fn run_one(config: &ExperimentConfig, train: &TrainConfig, fp: &str, ckpt: Option<&Path>) -> Result<RunResult> {
    let start = Instant::now();
    let pair = config.dataset.load(train.seed)?;
    let out = train_with::<f32>(train, &pair, |_| {})?;
    if let Some(dir) = ckpt {
        save_checkpoint(&dir.join(format!("seed{}.ckpt", train.seed)), &out.models, train.seed)?;
    }
    Ok(RunResult {
        fingerprint: fp.to_string(),
        label: config.label(),
        cheating_mode: config.dataset.scenario.name().to_string(),
        bias: config.dataset.bias,
        seed: train.seed,
        source_acc: out.source_acc,
        target_acc: out.target_acc,
        history: out.history,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs seeds `seed..seed + seeds` in parallel, up to `jobs` at a time.
///
/// With an output directory each finished run is appended to `runs.jsonl`
/// as it completes, seeds already recorded there for the same configuration
/// are not re-run, and `metrics.csv` and per-seed checkpoints are written.
/// Results come back in seed order. If any run fails the others still
/// finish and are persisted, and the first error is returned.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<RunResult>> {
    config.validate()?;
    let fp = fingerprint(config);
    let seeds: Vec<TrainConfig> = (0..config.seeds).map(|i| config.for_seed(i)).collect();
    let (mut done, sink, ckpt) = match out_dir {
        Some(dir) => {
            let ckpt = dir.join(CHECKPOINT_DIR);
            fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
            let path = dir.join(RUNS_FILE);
            let done = load_completed(&path, &fp)?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            (done, Some((Mutex::new(file), path)), Some(ckpt))
        }
        None => (BTreeMap::new(), None, None),
    };
    let wanted: Vec<u64> = seeds.iter().map(|t| t.seed).collect();
    done.retain(|s, _| wanted.contains(s));
    let pending: Vec<&TrainConfig> = seeds.iter().filter(|t| !done.contains_key(&t.seed)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start {} workers: {e}", config.jobs)))?;
    let fresh: Vec<Result<RunResult>> = pool.install(|| {
        pending
            .par_iter()
            .map(|t| {
                let r = run_one(config, t, &fp, ckpt.as_deref())?;
                if let Some((file, path)) = &sink {
                    append_record(file, path, &r)?;
                }
                Ok(r)
            })
            .collect()
    });
    let mut first_err = None;
    for r in fresh {
        match r {
            Ok(r) => {
                done.insert(r.seed, r);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let results: Vec<RunResult> = done.into_values().collect();
    if let Some(dir) = out_dir {
        write_metrics_csv(&results, &dir.join(METRICS_FILE))?;
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(results),
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample z statistic `(mean_a - mean_b) / sqrt(s_a^2/n_a + s_b^2/n_b)`
/// with unbiased sample variances. When both variances vanish the result
/// is 0 for equal means and a signed infinity (exact separation) otherwise.
pub fn z_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Invalid(format!(
            "z score needs at least two values per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("z score of non-finite accuracies".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    let diff = ma - mb;
    Ok(if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub a: String,
    pub b: String,
    pub accs_a: Vec<f64>,
    pub accs_b: Vec<f64>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub z: f64,
    /// `z >= 2.33`: A beats B at 99% one-sided confidence.
    pub significant: bool,
}

impl ComparisonReport {
    pub fn new(a: impl Into<String>, accs_a: Vec<f64>, b: impl Into<String>, accs_b: Vec<f64>) -> Result<Self> {
        let z = z_score(&accs_a, &accs_b)?;
        Ok(ComparisonReport {
            a: a.into(),
            b: b.into(),
            mean_a: mean_var(&accs_a).0,
            mean_b: mean_var(&accs_b).0,
            accs_a,
            accs_b,
            z,
            significant: z >= Z_THRESHOLD,
        })
    }

    pub fn exact(&self) -> bool {
        self.z.is_infinite()
    }

    /// Compares the final target accuracies recorded in two metrics files.
    pub fn from_csv(a: &Path, b: &Path) -> Result<Self> {
        let (la, xa) = final_target_accs(a)?;
        let (lb, xb) = final_target_accs(b)?;
        Self::new(la, xa, lb, xb)
    }

    /// Compares two experiment output directories.
    pub fn from_dirs(a: &Path, b: &Path) -> Result<Self> {
        Self::from_csv(&metrics_path(a), &metrics_path(b))
    }
}

impl std::fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let pct = |v: &[f64]| v.iter().map(|x| format!("{:.1}", 100.0 * x)).collect::<Vec<_>>().join(", ");
        writeln!(f, "A {}: mean {:.2}% [{}]", self.a, 100.0 * self.mean_a, pct(&self.accs_a))?;
        writeln!(f, "B {}: mean {:.2}% [{}]", self.b, 100.0 * self.mean_b, pct(&self.accs_b))?;
        let z = if self.exact() {
            format!("{}exact", if self.z > 0.0 { "+" } else { "-" })
        } else {
            format!("{:.3}", self.z)
        };
        let verdict = if self.significant {
            "A better at 99%"
        } else {
            "not significant"
        };
        write!(f, "z = {z} ({verdict}, threshold {Z_THRESHOLD})")
    }
}

pub fn metrics_path(dir: &Path) -> PathBuf {
    if dir.is_file() {
        dir.to_path_buf()
    } else {
        dir.join(METRICS_FILE)
    }
}

/// Condition label and per-seed final target accuracies, in seed order.
pub fn final_target_accs(path: &Path) -> Result<(String, Vec<f64>)> {
    let rows = read_metrics_csv(path)?;
    let finals: Vec<&MetricsRow> = rows.iter().filter(|r| r.is_final()).collect();
    let Some(first) = finals.first() else {
        return Err(Error::format(path, "no completed runs"));
    };
    let condition = |r: &MetricsRow| (r.algo.clone(), r.cheating_mode.clone(), r.bias.map(f64::to_bits));
    if finals.iter().any(|r| condition(r) != condition(first)) {
        return Err(Error::format(path, "file mixes several conditions"));
    }
    let mut by_seed: BTreeMap<u64, f64> = BTreeMap::new();
    for r in &finals {
        let acc = r
            .target_acc
            .ok_or_else(|| Error::format(path, format!("seed {} has no target accuracy", r.seed)))?;
        by_seed.insert(r.seed, acc);
    }
    let mut label = format!("{}/{}", first.algo, first.cheating_mode);
    if let Some(p) = first.bias {
        label.push_str(&format!("/bias{p}"));
    }
    Ok((label, by_seed.into_values().collect()))
}
