use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use direp::datasets::{DatasetKind, FM_SIDE};
use direp::geometry::{random_instance, verify_claims, GeometryInstance};
use direp::harness::{
    dump_reconstructions, run_experiment, ComparisonReport, ExperimentConfig, DATA_DIR_ENV,
};
use direp::networks::load_checkpoint;
use direp::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "direp", version, about = "Domain adaptation with a maximal domain-independent representation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one condition over several seeds and record metrics.
    Run(RunArgs),
    /// Two-sample z test on final target accuracies of two runs.
    Compare {
        /// Output directory (or metrics.csv) of condition A.
        #[arg(long)]
        a: PathBuf,
        /// Output directory (or metrics.csv) of condition B.
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write original, reconstructed and bit-flipped images from an explicit-DDRep checkpoint.
    DumpRecon(DumpArgs),
    /// Check the DIRep geometry claims numerically on random instances.
    VerifyGeometry {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1000)]
        n_theta: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the canonical instance's sweep here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DatasetArgs {
    /// fm, cifar or blobs.
    #[arg(long)]
    dataset: Option<String>,
    /// none, shift or random.
    #[arg(long)]
    cheating: Option<String>,
    /// Colour-plane bias for cifar, in [0, 1].
    #[arg(long)]
    bias: Option<f64>,
    /// Dataset root; defaults to $DIREP_DATA_DIR.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// vaegan, explicit, gan, dann, dsn, source_only or target_only.
    #[arg(long)]
    algo: Option<String>,
    #[command(flatten)]
    data: DatasetArgs,
    /// Target labels revealed per class.
    #[arg(long)]
    semi: Option<usize>,
    /// dsn_reverse_kl, dsn_star or vaegan_reverse_difference.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    /// First seed; runs use seed..seed+seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Also record test accuracies at each report, on this many samples.
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    /// `key = value` experiment file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment file the checkpoint was trained with, for dataset options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DatasetArgs,
    /// Samples per domain.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    /// Image shape as WxH; 28x28 for fm.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn data_lines(d: &DatasetArgs) -> Vec<(&'static str, String)> {
    let mut kv = Vec::new();
    let mut push = |k, v: Option<String>| {
        if let Some(v) = v {
            kv.push((k, v));
        }
    };
    push("dataset", d.dataset.clone());
    push("cheating", d.cheating.clone());
    push("bias", d.bias.map(|v| v.to_string()));
    let dir = d.data_dir.clone().or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));
    push("data_dir", dir.map(|p| p.display().to_string()));
    kv
}

fn experiment(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut text = match &args.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut kv = data_lines(&args.data);
    let mut push = |k, v: Option<String>| {
        if let Some(v) = v {
            kv.push((k, v));
        }
    };
    push("algo", args.algo.clone());
    push("semi", args.semi.map(|v| v.to_string()));
    push("ablation", args.ablation.clone());
    push("seeds", args.seeds.map(|v| v.to_string()));
    push("seed", args.seed.map(|v| v.to_string()));
    push("iters", args.iters.map(|v| v.to_string()));
    push("batch", args.batch.map(|v| v.to_string()));
    push("lr", args.lr.map(|v| v.to_string()));
    push("eval_every", args.eval_every.map(|v| v.to_string()));
    push("eval_samples", args.eval_samples.map(|v| v.to_string()));
    push("jobs", args.jobs.map(|v| v.to_string()));
    for (k, v) in kv {
        text.push_str(&format!("\n{k} = {v}"));
    }
    Ok(ExperimentConfig::parse(&text)?)
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = experiment(args)?;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    eprintln!(
        "{} on {} ({} cheating), {} iterations x {} seeds, {} jobs",
        cfg.label(),
        cfg.dataset.kind.name(),
        cfg.dataset.scenario.name(),
        cfg.train.total_iterations(),
        cfg.seeds,
        cfg.jobs
    );
    let results = run_experiment(&cfg, args.out.as_deref())?;
    for r in &results {
        println!(
            "seed {:>3}  source {:6.2}%  target {:6.2}%  ({:.1}s)",
            r.seed,
            100.0 * r.source_acc,
            100.0 * r.target_acc,
            r.seconds
        );
    }
    let mean = results.iter().map(|r| r.target_acc).sum::<f64>() / results.len() as f64;
    println!("mean target accuracy {:.2}%", 100.0 * mean);
    if let Some(out) = &args.out {
        println!("metrics in {}", out.display());
    }
    Ok(())
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s.split_once('x').context("shape must look like WxH")?;
    Ok((w.parse()?, h.parse()?))
}

fn dump(args: &DumpArgs) -> Result<()> {
    let (models, header) = load_checkpoint::<f32>(&args.checkpoint)?;
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &args.config {
        cfg = ExperimentConfig::from_file(p)?;
    }
    for (k, v) in data_lines(&args.data) {
        cfg.set(k, &v).map_err(|e| Error::Config(vec![e]))?;
    }
    let spec = cfg.dataset;
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems).into());
    }
    let shape = match (&args.shape, spec.kind) {
        (Some(s), _) => parse_shape(s)?,
        (None, DatasetKind::Fm) => (FM_SIDE, FM_SIDE),
        (None, kind) => bail!("{} inputs are not greyscale images; pass --shape", kind.name()),
    };
    let pair = spec.load(header.seed)?;
    let n = args.samples;
    for (name, split) in [("source", &pair.source_test), ("target", &pair.target_test)] {
        let dir = args.out.join(name);
        let take = &split[..n.min(split.len())];
        let s = dump_reconstructions(&models, take, &dir, shape)?;
        println!(
            "{name}: {} samples in {}, flipped bit changes {} of them",
            s.written,
            dir.display(),
            s.flip_differs
        );
    }
    Ok(())
}

fn verify_geometry(instances: usize, n_theta: usize, seed: u64, csv: Option<&PathBuf>) -> Result<()> {
    let canonical = GeometryInstance::new([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])?;
    let report = verify_claims(&canonical, n_theta)?;
    if let Some(path) = csv {
        report.write_csv(path)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_res, mut worst_sin) = (report.max_residual, report.max_sin_error);
    for _ in 0..instances {
        let r = verify_claims(&random_instance(&mut rng), n_theta)?;
        worst_res = worst_res.max(r.max_residual);
        worst_sin = worst_sin.max(r.max_sin_error);
    }
    println!(
        "{} instances x {n_theta} angles: max orthogonality residual {worst_res:.2e}, \
         max |OD|/|V| - sin(theta) {worst_sin:.2e}, DDRep size smallest at theta = pi/2",
        instances + 1
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::NumericAbort { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Compare { a, b, json } => ComparisonReport::from_dirs(a, b).map_err(Into::into).and_then(|r| {
            if *json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("{r}");
            }
            Ok(())
        }),
        Command::DumpRecon(args) => dump(args),
        Command::VerifyGeometry {
            instances,
            n_theta,
            seed,
            csv,
        } => verify_geometry(*instances, *n_theta, *seed, csv.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
